#include "milens/registry.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "milens/error.hpp"

namespace milens {

namespace fs = std::filesystem;
using nlohmann::json;

std::string make_run_id(const FlatConfig& config) {
  const std::string text = config.canonical();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_run_record(const RunRecord& record, const std::string& path) {
  json j;
  j["run_id"] = record.run_id;
  j["config"] = record.config;
  j["seed"] = record.seed;
  j["status"] = record.status;
  if (!record.error.empty()) j["error"] = record.error;
  j["started_at"] = record.started_at;
  j["finished_at"] = record.finished_at;
  j["code_revision"] = record.code_revision;
  j["artifacts"] = record.artifacts;
  j["probe_standardized"] = record.probe_standardized;
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot write run record");
  out << j.dump(2) << "\n";
}

RunRecord read_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open run record");
  json j;
  in >> j;
  RunRecord record;
  record.run_id = j.value("run_id", "");
  if (j.contains("config"))
    for (const auto& [key, value] : j.at("config").items())
      record.config[key] = value.get<std::string>();
  record.seed = j.value("seed", 0ull);
  record.status = j.value("status", "");
  record.error = j.value("error", "");
  record.started_at = j.value("started_at", "");
  record.finished_at = j.value("finished_at", "");
  record.code_revision = j.value("code_revision", "");
  if (j.contains("artifacts"))
    for (const auto& [key, value] : j.at("artifacts").items())
      record.artifacts[key] = value.get<std::string>();
  record.probe_standardized = j.value("probe_standardized", true);
  return record;
}

std::vector<std::string> find_run_records(const std::string& runs_glob) {
  std::string root = runs_glob;
  while (!root.empty() && (root.back() == '*' || root.back() == '/')) root.pop_back();
  std::vector<std::string> records;
  if (root.empty() || !fs::exists(root)) return records;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const fs::path record = entry.path() / "record.json";
    if (fs::exists(record)) records.push_back(record.string());
  }
  std::sort(records.begin(), records.end());
  return records;
}

}  // namespace milens
