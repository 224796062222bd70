#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "milens/datasets.hpp"
#include "milens/encoders.hpp"
#include "milens/tensor.hpp"

namespace milens {

// Multinomial logistic regression on frozen representations. Full-batch
// gradient descent, learning rate 1.0 with backtracking halving, L2 penalty
// 1e-4 on the weights, max 500 epochs, stop when the gradient max-norm drops
// below 1e-5. Features are standardized with train-split statistics.
struct ProbeSettings {
  double l2_penalty = 1e-4;
  double initial_lr = 1.0;
  int64_t max_epochs = 500;
  double grad_tolerance = 1e-5;
  int64_t classes = 10;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double test_log_loss = 0.0;
  double train_log_loss = 0.0;
  bool converged = false;  // warning flag only; never aborts
  int64_t epochs = 0;
};

// Trains the probe on (train_x, train_labels) and scores it on the test set.
// train_x/test_x are row-major [n, d].
ProbeResult train_probe(const std::vector<double>& train_x, const std::vector<int>& train_labels,
                        const std::vector<double>& test_x, const std::vector<int>& test_labels,
                        int64_t dim, const ProbeSettings& settings = {});

// Encodes both splits of view1 with the frozen encoder and runs the probe.
// noise_tag seeds the fresh noise draw for noisy datasets.
ProbeResult linear_eval(const Encoder& encoder, const ViewPairDataset& dataset,
                        uint64_t noise_tag = 0, const ProbeSettings& settings = {});

// Batched value-only encoding of a full [n, d_in] matrix.
std::vector<double> encode_all(const Encoder& encoder, const std::vector<double>& inputs,
                               int64_t dim_in, int64_t batch = 256);

struct SupervisedConfig {
  EncoderKind architecture = EncoderKind::kMlp;  // mlp or convnet
  int64_t iterations = 10000;
  int64_t batch_size = 128;
  double learning_rate = 1e-4;
  uint64_t seed = 1;
};

struct SupervisedResult {
  double test_accuracy = 0.0;
  double final_train_loss = 0.0;
};

// End-to-end cross-entropy reference: encoder + linear head on view1.
SupervisedResult supervised_reference(const ViewPairDataset& dataset,
                                      const SupervisedConfig& config);

// Percentile summary of Jacobian condition numbers at sampled inputs.
struct ConditionSummary {
  // 0th, 20th, 40th, 60th, 80th, 100th percentiles.
  std::array<double, 6> percentiles{};
  double median = 0.0;
  int64_t infinite_count = 0;  // sigma_min below 1e-300 reported as +inf
};

ConditionSummary condition_percentiles(const Encoder& encoder, const ViewPairDataset& dataset,
                                       int64_t n_inputs, uint64_t seed, uint64_t noise_tag = 0);

// Condition number sigma_max / sigma_min of one Jacobian (LAPACK SVD).
double condition_number(const Tensor& jacobian_matrix);

std::vector<double> singular_values(const Tensor& matrix);

}  // namespace milens
