#include "milens/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "milens/error.hpp"

namespace milens {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

FlatConfig FlatConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

FlatConfig FlatConfig::parse_string(const std::string& text, const std::string& origin) {
  FlatConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" +
                        line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    config.values_[key] = value;
  }
  return config;
}

std::string FlatConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key + ": required field is missing");
  return it->second;
}

std::string FlatConfig::str_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int64_t FlatConfig::i64_or(const std::string& key, int64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), out);
  if (ec != std::errc{} || ptr != it->second.data() + it->second.size())
    throw ConfigError(key + ": expected an integer, got '" + it->second + "'");
  return out;
}

double FlatConfig::f64_or(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t used = 0;
    const double out = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + it->second + "'");
  }
}

bool FlatConfig::flag_or(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  throw ConfigError(key + ": expected true|false, got '" + it->second + "'");
}

std::string FlatConfig::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  }
  return out;
}

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kMaximize: return "maximize";
    case ObjectiveKind::kTarget: return "target";
    case ObjectiveKind::kAdversarial: return "adversarial";
  }
  return "?";
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "experiment.kind", "dataset.kind", "dataset.dir",
      "noise.enabled", "noise.sigma", "noise.coupled", "noise.fixed_per_image",
      "encoder.view1", "encoder.view2", "critic.kind", "estimator.kind",
      "objective.kind", "objective.target", "gauss.mode",
      "optim.batch_size", "optim.learning_rate", "optim.encoder_learning_rate",
      "optim.iterations", "adversarial.warmup", "adversarial.head_steps",
      "eval.every", "eval.probe_every", "eval.batches",
      "diag.condition_number", "diag.flow_roundtrip", "diag.condition_inputs",
      "run.seed", "run.seeds", "run.out_dir", "run.threads",
  };
  return keys;
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token.empty()) continue;
    seeds.push_back(std::stoull(token));
  }
  if (seeds.empty()) throw ConfigError("run.seeds: empty seed list");
  return seeds;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_flat(FlatConfig flat, const std::string& env_data_dir) {
  for (const auto& [key, value] : flat.values())
    if (!known_keys().count(key)) throw ConfigError(key + ": unknown configuration key");

  ExperimentConfig config;
  const std::string experiment = flat.str_or("experiment.kind", "views");
  if (experiment == "views")
    config.experiment = ExperimentKind::kViews;
  else if (experiment == "gauss_bias")
    config.experiment = ExperimentKind::kGaussBias;
  else
    throw ConfigError("experiment.kind: unknown kind '" + experiment +
                      "' (expected views|gauss_bias)");

  config.batch_size = flat.i64_or("optim.batch_size", 128);
  if (config.batch_size < 1) throw ConfigError("optim.batch_size: must be >= 1");
  config.iterations = flat.i64_or("optim.iterations", 10000);
  if (config.iterations < 0) throw ConfigError("optim.iterations: must be >= 0");
  config.learning_rate = flat.f64_or("optim.learning_rate", 1e-4);
  if (config.learning_rate < 0) throw ConfigError("optim.learning_rate: must be >= 0");
  config.encoder_learning_rate = flat.f64_or("optim.encoder_learning_rate", 1e-6);
  config.adversarial_warmup = flat.i64_or("adversarial.warmup", 1000);
  config.adversarial_head_steps = flat.i64_or("adversarial.head_steps", 10);
  config.eval_every = flat.i64_or("eval.every", 500);
  config.probe_every = flat.i64_or("eval.probe_every", 1000);
  config.eval_batches = flat.i64_or("eval.batches", 50);
  if (config.eval_every < 1 || config.probe_every < 1 || config.eval_batches < 1)
    throw ConfigError("eval.*: cadences and batch counts must be >= 1");
  config.seed = static_cast<uint64_t>(flat.i64_or("run.seed", 1));
  config.seeds = flat.has("run.seeds") ? parse_seed_list(flat.str("run.seeds"))
                                       : std::vector<uint64_t>{config.seed};
  config.out_dir = flat.str_or("run.out_dir", "runs");
  config.threads = flat.i64_or("run.threads", 1);
  if (config.threads < 1) throw ConfigError("run.threads: must be >= 1");

  if (config.experiment == ExperimentKind::kGaussBias) {
    config.gauss_mode = sample_mode_from_string(flat.str_or("gauss.mode", "iid"));
    config.estimator = estimator_from_string(flat.str_or("estimator.kind", "infonce"));
    if (flat.has("critic.kind"))
      throw ConfigError("critic.kind: gauss_bias runs use the built-in critic");
    config.snapshot = std::move(flat);
    return config;
  }

  config.dataset = dataset_from_string(flat.str_or("dataset.kind", "mnist"));
  config.data_dir = flat.str_or("dataset.dir", "");
  if (config.data_dir.empty()) {
    if (env_data_dir.empty())
      throw ConfigError("dataset.dir: missing (set the key or MI_LENS_DATA_DIR)");
    config.data_dir = env_data_dir + "/" + to_string(config.dataset);
  }
  config.noise.enabled = flat.flag_or("noise.enabled", false);
  config.noise.sigma = flat.f64_or("noise.sigma", 0.05);
  if (config.noise.sigma < 0) throw ConfigError("noise.sigma: must be >= 0");
  config.noise.coupled = flat.flag_or("noise.coupled", true);
  config.noise.fixed_per_image = flat.flag_or("noise.fixed_per_image", false);

  const std::string objective = flat.str_or("objective.kind", "maximize");
  if (objective == "maximize")
    config.objective = ObjectiveKind::kMaximize;
  else if (objective == "target")
    config.objective = ObjectiveKind::kTarget;
  else if (objective == "adversarial")
    config.objective = ObjectiveKind::kAdversarial;
  else
    throw ConfigError("objective.kind: unknown objective '" + objective + "'");

  config.encoder_view1 = encoder_from_string(flat.str_or("encoder.view1", "mlp"));
  config.encoder_view2 = encoder_from_string(flat.str_or("encoder.view2", "mlp"));

  if (config.objective == ObjectiveKind::kAdversarial) {
    if (config.encoder_view1 != EncoderKind::kRealNvp)
      throw ConfigError("encoder.view1: adversarial objective requires an invertible encoder "
                        "(realnvp)");
    if (flat.has("critic.kind"))
      throw ConfigError("critic.kind: adversarial objective uses no critic");
    if (flat.has("estimator.kind"))
      throw ConfigError("estimator.kind: adversarial objective uses no estimator");
  } else {
    config.critic = critic_from_string(flat.str_or("critic.kind", "bilinear"));
    config.estimator = estimator_from_string(flat.str_or("estimator.kind", "infonce"));
    if (config.objective == ObjectiveKind::kTarget) {
      if (!flat.has("objective.target"))
        throw ConfigError("objective.target: required for the target objective");
      config.target = flat.f64_or("objective.target", 0.0);
      if (config.target < 0) throw ConfigError("objective.target: must be >= 0");
    }
  }

  config.diag_condition_number = flat.flag_or("diag.condition_number", false);
  const bool any_flow = config.encoder_view1 == EncoderKind::kRealNvp ||
                        config.encoder_view2 == EncoderKind::kRealNvp;
  config.diag_flow_roundtrip = flat.flag_or("diag.flow_roundtrip", any_flow);
  config.condition_inputs = flat.i64_or("diag.condition_inputs", 128);

  config.snapshot = std::move(flat);
  config.write_back_resolved();
  return config;
}

// Records every resolved field in the snapshot so run ids and records do not
// depend on which values were spelled out versus defaulted.
void ExperimentConfig::write_back_resolved() {
  auto& s = snapshot;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  s.set("experiment.kind", experiment == ExperimentKind::kViews ? "views" : "gauss_bias");
  s.set("optim.batch_size", std::to_string(batch_size));
  s.set("optim.learning_rate", num(learning_rate));
  s.set("optim.iterations", std::to_string(iterations));
  s.set("eval.every", std::to_string(eval_every));
  s.set("eval.probe_every", std::to_string(probe_every));
  s.set("eval.batches", std::to_string(eval_batches));
  s.set("run.seed", std::to_string(seed));
  s.set("run.threads", std::to_string(threads));
  if (experiment == ExperimentKind::kGaussBias) {
    s.set("gauss.mode", to_string(gauss_mode));
    s.set("estimator.kind", to_string(*estimator));
    return;
  }
  s.set("dataset.kind", to_string(dataset));
  s.set("dataset.dir", data_dir);
  s.set("noise.enabled", noise.enabled ? "true" : "false");
  s.set("noise.sigma", num(noise.sigma));
  s.set("noise.coupled", noise.coupled ? "true" : "false");
  s.set("noise.fixed_per_image", noise.fixed_per_image ? "true" : "false");
  s.set("encoder.view1", to_string(encoder_view1));
  s.set("encoder.view2", to_string(encoder_view2));
  s.set("objective.kind", to_string(objective));
  if (objective == ObjectiveKind::kTarget) s.set("objective.target", num(target));
  if (critic) s.set("critic.kind", to_string(*critic));
  if (estimator) s.set("estimator.kind", to_string(*estimator));
  if (objective == ObjectiveKind::kAdversarial) {
    s.set("optim.encoder_learning_rate", num(encoder_learning_rate));
    s.set("adversarial.warmup", std::to_string(adversarial_warmup));
    s.set("adversarial.head_steps", std::to_string(adversarial_head_steps));
  }
  s.set("diag.condition_number", diag_condition_number ? "true" : "false");
  s.set("diag.flow_roundtrip", diag_flow_roundtrip ? "true" : "false");
  s.set("diag.condition_inputs", std::to_string(condition_inputs));
}

}  // namespace milens
