#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "milens/estimators.hpp"
#include "milens/rng.hpp"
#include "milens/tensor.hpp"

namespace milens {

using Cov2 = std::array<double, 4>;  // row-major 2x2

// Latent + noise decomposition (X, Y) = Z + eps with Z ~ N(0, sigma_z) and
// eps ~ N(0, sigma_eps). Both covariances must be symmetric positive
// definite, and the total covariance must have |correlation| < 1.
struct GaussSetup {
  Cov2 sigma_z;
  Cov2 sigma_eps;

  GaussSetup(Cov2 z, Cov2 eps);
  Cov2 total() const;
};

// The paper-scale default: sigma_z off-diagonal -0.5, sigma_eps off-diagonal 0.9.
GaussSetup reference_gauss_setup();

// Mutual information in nats of a correlated bivariate Gaussian:
// -1/2 log(1 - c12 c21 / (c11 c22)). Errors if |correlation| >= 1.
double analytic_mi(const Cov2& cov);

enum class SampleMode { kIid, kSharedZ };

SampleMode sample_mode_from_string(const std::string& s);
std::string to_string(SampleMode mode);

struct GaussBatch {
  std::vector<double> xs;
  std::vector<double> ys;
};

// iid: fresh Z and eps per element. shared_z: one Z per batch, fresh eps per
// element, so elements are identically distributed but dependent.
GaussBatch sample_batch(const GaussSetup& setup, int64_t k, SampleMode mode, Rng& rng);

struct BiasTracePoint {
  int64_t step;
  double estimate;       // on the training batch at this step
  double running_mean;   // over the trailing smoothing window
};

struct BiasRunResult {
  std::vector<BiasTracePoint> trace;
  double true_mi = 0.0;
  double final_running_mean = 0.0;
  // Monte Carlo standard error of the running mean over the final window.
  double final_standard_error = 0.0;
  int64_t steps = 0;
};

struct BiasRunConfig {
  int64_t batch_size = 128;
  int64_t steps = 20000;
  double learning_rate = 1e-4;
  int64_t smoothing_window = 500;
  int64_t record_every = 50;  // trace density
};

// Trains the small critic MLP (5 ReLU hidden layers of 10 units, linear
// output, zero-initialized last layer) to maximize the estimator on batches
// of the requested mode, recording per-step estimates against the analytic
// MI. Aborts if the estimate exceeds 10 * log K.
BiasRunResult run_bias_experiment(const GaussSetup& setup, EstimatorKind estimator,
                                  SampleMode mode, uint64_t seed, const BiasRunConfig& config);

}  // namespace milens
