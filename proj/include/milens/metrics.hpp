#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace milens {

struct MetricRow {
  int64_t iteration;
  std::string split;   // train|test
  std::string metric;
  double value;
  uint64_t seed;
};

// Append-only CSV writer with the stable schema
// `iteration,split,metric,value,seed`. Values use shortest round-trip
// formatting so reruns are byte-identical. Iterations must be non-decreasing
// overall and strictly increasing per metric.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void append(int64_t iteration, const std::string& split, const std::string& metric,
              double value, uint64_t seed);
  void flush();

  static std::string format_value(double value);

 private:
  std::ofstream out_;
  std::string path_;
  std::map<std::string, int64_t> last_iteration_;
  int64_t last_any_ = -1;
};

// Reads a metrics CSV back into rows (used by figures and the acceptance
// suite).
std::vector<MetricRow> read_metrics_csv(const std::string& path);

}  // namespace milens
