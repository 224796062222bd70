#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "milens/config.hpp"

namespace milens {

// Content-addressed run directory layout:
//   <out_dir>/<run_id>/config.cfg     resolved flat config snapshot
//   <out_dir>/<run_id>/metrics.csv    RunMetrics rows
//   <out_dir>/<run_id>/checkpoint.bin model parameters (views runs)
//   <out_dir>/<run_id>/record.json    RunRecord
struct RunRecord {
  std::string run_id;
  std::map<std::string, std::string> config;
  uint64_t seed = 0;
  std::string status;  // ok | failed
  std::string error;
  std::string started_at;
  std::string finished_at;
  std::string code_revision;
  std::map<std::string, std::string> artifacts;
  bool probe_standardized = true;  // representation preprocessing flag
};

// FNV-1a 64-bit over the canonical config text (seed included via the
// run.seed key); collisions imply identical config+seed.
std::string make_run_id(const FlatConfig& config);

std::string iso8601_utc_now();

void write_run_record(const RunRecord& record, const std::string& path);
RunRecord read_run_record(const std::string& path);

// All record.json files under a glob-ish pattern: either a directory (every
// run inside) or a pattern ending in '*'.
std::vector<std::string> find_run_records(const std::string& runs_glob);

}  // namespace milens
