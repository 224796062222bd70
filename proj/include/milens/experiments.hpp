#pragma once

#include <functional>
#include <string>

#include "milens/config.hpp"
#include "milens/metrics.hpp"

namespace milens {

struct RunOutcome {
  int64_t final_iteration = 0;
  double final_test_estimate = 0.0;
  double final_probe_accuracy = 0.0;
  bool probe_ran = false;
};

// Executes one configured experiment, streaming RunMetrics rows into the
// writer and saving a final checkpoint when checkpoint_path is non-empty.
// Aborts with NumericError (iteration included) on a non-finite loss;
// rows written so far stay in the file.
RunOutcome run_experiment(const ExperimentConfig& config, MetricsWriter& metrics,
                          const std::string& checkpoint_path);

}  // namespace milens
