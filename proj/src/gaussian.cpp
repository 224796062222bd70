#include "milens/gaussian.hpp"

#include <cmath>
#include <deque>

#include "milens/adam.hpp"
#include "milens/error.hpp"
#include "milens/tape.hpp"

namespace milens {

namespace {

void check_spd(const Cov2& c, const char* name) {
  if (c[1] != c[2])
    throw ConfigError(std::string(name) + ": not symmetric (" + std::to_string(c[1]) + " vs " +
                      std::to_string(c[2]) + ")");
  if (c[0] <= 0.0 || c[0] * c[3] - c[1] * c[2] <= 0.0)
    throw ConfigError(std::string(name) + ": not positive definite");
}

// The noise covariance may be degenerate (all-zero is allowed so the sampler
// can be exercised with deterministic elements).
void check_psd(const Cov2& c, const char* name) {
  if (c[1] != c[2])
    throw ConfigError(std::string(name) + ": not symmetric (" + std::to_string(c[1]) + " vs " +
                      std::to_string(c[2]) + ")");
  if (c[0] < 0.0 || c[3] < 0.0 || c[0] * c[3] - c[1] * c[2] < 0.0)
    throw ConfigError(std::string(name) + ": not positive semi-definite");
}

// Lower Cholesky factor of a 2x2 PSD matrix.
std::array<double, 3> chol2(const Cov2& c) {
  const double l00 = std::sqrt(c[0]);
  if (l00 == 0.0) return {0.0, 0.0, std::sqrt(c[3])};
  const double l10 = c[2] / l00;
  return {l00, l10, std::sqrt(std::max(0.0, c[3] - l10 * l10))};
}

}  // namespace

GaussSetup::GaussSetup(Cov2 z, Cov2 eps) : sigma_z(z), sigma_eps(eps) {
  check_spd(sigma_z, "sigma_z");
  check_psd(sigma_eps, "sigma_eps");
  const Cov2 t = total();
  const double rho2 = t[1] * t[2] / (t[0] * t[3]);
  if (rho2 >= 1.0) throw ConfigError("gauss setup: total covariance has |correlation| >= 1");
}

Cov2 GaussSetup::total() const {
  return {sigma_z[0] + sigma_eps[0], sigma_z[1] + sigma_eps[1], sigma_z[2] + sigma_eps[2],
          sigma_z[3] + sigma_eps[3]};
}

GaussSetup reference_gauss_setup() {
  return GaussSetup({1.0, -0.5, -0.5, 1.0}, {1.0, 0.9, 0.9, 1.0});
}

double analytic_mi(const Cov2& cov) {
  check_spd(cov, "analytic_mi");
  const double rho2 = cov[1] * cov[2] / (cov[0] * cov[3]);
  if (rho2 >= 1.0) throw NumericError("analytic_mi: |correlation| >= 1");
  return -0.5 * std::log(1.0 - rho2);
}

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "iid") return SampleMode::kIid;
  if (s == "shared_z") return SampleMode::kSharedZ;
  throw ConfigError("gauss.mode: unknown mode '" + s + "' (expected iid|shared_z)");
}

std::string to_string(SampleMode mode) { return mode == SampleMode::kIid ? "iid" : "shared_z"; }

GaussBatch sample_batch(const GaussSetup& setup, int64_t k, SampleMode mode, Rng& rng) {
  if (k < 2) throw ConfigError("sample_batch: K must be >= 2");
  const auto lz = chol2(setup.sigma_z);
  const auto le = chol2(setup.sigma_eps);
  GaussBatch batch;
  batch.xs.resize(static_cast<size_t>(k));
  batch.ys.resize(static_cast<size_t>(k));
  double zx = 0.0, zy = 0.0;
  if (mode == SampleMode::kSharedZ) {
    const double n0 = rng.normal(), n1 = rng.normal();
    zx = lz[0] * n0;
    zy = lz[1] * n0 + lz[2] * n1;
  }
  for (int64_t i = 0; i < k; ++i) {
    if (mode == SampleMode::kIid) {
      const double n0 = rng.normal(), n1 = rng.normal();
      zx = lz[0] * n0;
      zy = lz[1] * n0 + lz[2] * n1;
    }
    const double e0 = rng.normal(), e1 = rng.normal();
    batch.xs[static_cast<size_t>(i)] = zx + le[0] * e0;
    batch.ys[static_cast<size_t>(i)] = zy + le[1] * e0 + le[2] * e1;
  }
  return batch;
}

namespace {

// Critic for the synthetic experiment: concat(x, y) -> 5x(dense 10, relu) ->
// dense 1, output layer zero-initialized so training starts at a constant
// critic.
struct GaussCritic {
  static constexpr int64_t kHidden = 10;
  static constexpr int64_t kLayers = 5;
  std::vector<Param*> ws, bs;
  Param* w_out;
  Param* b_out;

  GaussCritic(ParamStore& store, Rng& rng) {
    int64_t in = 2;
    for (int64_t l = 0; l < kLayers; ++l) {
      ws.push_back(&store.create_dense_init("critic/l" + std::to_string(l) + "/W", {in, kHidden},
                                            in, kHidden, rng));
      bs.push_back(&store.create("critic/l" + std::to_string(l) + "/b", {kHidden}));
      in = kHidden;
    }
    w_out = &store.create("critic/out/W", {kHidden, 1});
    b_out = &store.create("critic/out/b", {1});
  }

  // xs, ys: [K] -> score matrix [K, K] over all pairs.
  NodeId score_matrix(Tape& tape, const std::vector<double>& xs,
                      const std::vector<double>& ys) const {
    const auto k = static_cast<int64_t>(xs.size());
    NodeId xcol = tape.input({k, 1}, xs);
    NodeId ycol = tape.input({k, 1}, ys);
    NodeId pairs = tape.concat_cols(tape.repeat_rows(xcol, k), tape.tile_rows(ycol, k));
    NodeId h = pairs;
    for (size_t l = 0; l < ws.size(); ++l)
      h = tape.relu(tape.bias_add(tape.matmul(h, tape.param(*ws[l])), tape.param(*bs[l])));
    NodeId out = tape.bias_add(tape.matmul(h, tape.param(*w_out)), tape.param(*b_out));
    return tape.reshape(out, {k, k});
  }
};

}  // namespace

BiasRunResult run_bias_experiment(const GaussSetup& setup, EstimatorKind estimator,
                                  SampleMode mode, uint64_t seed, const BiasRunConfig& config) {
  const double true_mi = analytic_mi(setup.total());
  const double log_k = std::log(static_cast<double>(config.batch_size));
  if (log_k <= true_mi)
    throw ConfigError("run_bias_experiment: log K = " + std::to_string(log_k) +
                      " must exceed the analytic MI " + std::to_string(true_mi));

  ParamStore store;
  Rng init_rng(Rng::mix({seed, 0x696e6974ull}));
  GaussCritic critic(store, init_rng);
  std::vector<Param*> params;
  for (auto& p : store) params.push_back(&p);
  Adam adam(params);

  Rng data_rng(Rng::mix({seed, 0x64617461ull}));
  BiasRunResult result;
  result.true_mi = true_mi;
  result.steps = config.steps;

  std::deque<double> window;
  double window_sum = 0.0, window_sumsq = 0.0;
  for (int64_t step = 0; step < config.steps; ++step) {
    GaussBatch batch = sample_batch(setup, config.batch_size, mode, data_rng);
    Tape tape;
    NodeId scores = critic.score_matrix(tape, batch.xs, batch.ys);
    NodeId est = estimate(tape, estimator, scores);
    const double est_value = tape.scalar(est);
    if (est_value > 10.0 * log_k)
      throw NumericError("run_bias_experiment: diverged at step " + std::to_string(step) +
                         " (estimate " + std::to_string(est_value) + " > 10 log K)");
    tape.backward(tape.scale(est, -1.0));
    adam.step(config.learning_rate);

    window.push_back(est_value);
    window_sum += est_value;
    window_sumsq += est_value * est_value;
    if (static_cast<int64_t>(window.size()) > config.smoothing_window) {
      const double old = window.front();
      window.pop_front();
      window_sum -= old;
      window_sumsq -= old * old;
    }
    const double mean = window_sum / static_cast<double>(window.size());
    if (step % config.record_every == 0 || step + 1 == config.steps)
      result.trace.push_back({step, est_value, mean});
    if (step + 1 == config.steps) {
      const double n = static_cast<double>(window.size());
      result.final_running_mean = mean;
      const double var = std::max(0.0, window_sumsq / n - mean * mean);
      result.final_standard_error = std::sqrt(var / n);
    }
  }
  return result;
}

}  // namespace milens
