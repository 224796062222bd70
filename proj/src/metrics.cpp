#include "milens/metrics.hpp"

#include <charconv>
#include <sstream>

#include "milens/error.hpp"

namespace milens {

MetricsWriter::MetricsWriter(const std::string& path) : out_(path), path_(path) {
  if (!out_) throw DataError("metrics: cannot open '" + path + "' for writing");
  out_ << "iteration,split,metric,value,seed\n";
}

std::string MetricsWriter::format_value(double value) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc{}) throw NumericError("metrics: cannot format value");
  return std::string(buf, ptr);
}

void MetricsWriter::append(int64_t iteration, const std::string& split, const std::string& metric,
                           double value, uint64_t seed) {
  const std::string key = split + "/" + metric;
  const auto it = last_iteration_.find(key);
  if (it != last_iteration_.end() && iteration <= it->second)
    throw DataError("metrics: iteration " + std::to_string(iteration) + " for " + key +
                    " does not increase (last " + std::to_string(it->second) + ")");
  if (iteration < last_any_)
    throw DataError("metrics: iteration " + std::to_string(iteration) +
                    " is smaller than an already-written row");
  last_iteration_[key] = iteration;
  last_any_ = iteration;
  out_ << iteration << ',' << split << ',' << metric << ',' << format_value(value) << ',' << seed
       << '\n';
}

void MetricsWriter::flush() { out_.flush(); }

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "iteration,split,metric,value,seed")
    throw DataError("metrics: '" + path + "' has an unexpected header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    MetricRow row;
    std::getline(ls, field, ',');
    row.iteration = std::stoll(field);
    std::getline(ls, row.split, ',');
    std::getline(ls, row.metric, ',');
    std::getline(ls, field, ',');
    row.value = std::stod(field);
    std::getline(ls, field, ',');
    row.seed = std::stoull(field);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace milens
