#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "milens/critics.hpp"
#include "milens/datasets.hpp"
#include "milens/encoders.hpp"
#include "milens/estimators.hpp"
#include "milens/gaussian.hpp"

namespace milens {

// Flat `key = value` text config with dotted section names. '#' starts a
// comment; blank lines ignored. Canonical serialization is sorted by key.
class FlatConfig {
 public:
  static FlatConfig parse_file(const std::string& path);
  static FlatConfig parse_string(const std::string& text, const std::string& origin = "<string>");

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key) const;
  std::string str_or(const std::string& key, const std::string& fallback) const;
  int64_t i64_or(const std::string& key, int64_t fallback) const;
  double f64_or(const std::string& key, double fallback) const;
  bool flag_or(const std::string& key, bool fallback) const;

  std::string canonical() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class ObjectiveKind { kMaximize, kTarget, kAdversarial };
enum class ExperimentKind { kViews, kGaussBias };

std::string to_string(ObjectiveKind kind);

// Fully validated description of one run.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kViews;

  // views experiments
  DatasetKind dataset = DatasetKind::kMnist;
  std::string data_dir;
  NoiseSpec noise;
  EncoderKind encoder_view1 = EncoderKind::kMlp;
  EncoderKind encoder_view2 = EncoderKind::kMlp;
  std::optional<CriticKind> critic;
  std::optional<EstimatorKind> estimator;
  ObjectiveKind objective = ObjectiveKind::kMaximize;
  double target = 0.0;

  // gauss-bias experiments
  SampleMode gauss_mode = SampleMode::kIid;

  int64_t batch_size = 128;
  double learning_rate = 1e-4;
  double encoder_learning_rate = 1e-6;  // adversarial encoder updates
  int64_t iterations = 10000;
  int64_t adversarial_warmup = 1000;
  int64_t adversarial_head_steps = 10;

  int64_t eval_every = 500;
  int64_t probe_every = 1000;
  int64_t eval_batches = 50;

  bool diag_condition_number = false;
  bool diag_flow_roundtrip = true;
  int64_t condition_inputs = 128;

  uint64_t seed = 1;
  std::vector<uint64_t> seeds;  // sweep fan-out; defaults to {seed}
  std::string out_dir = "runs";
  int64_t threads = 1;

  FlatConfig snapshot;  // resolved key/value view used for hashing + records

  // Parses, applies defaults, validates. `env_data_dir` supplies the
  // MI_LENS_DATA_DIR fallback. Throws ConfigError naming the offending field.
  static ExperimentConfig from_flat(FlatConfig flat, const std::string& env_data_dir);

 private:
  void write_back_resolved();
};

}  // namespace milens
