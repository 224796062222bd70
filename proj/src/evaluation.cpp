#include "milens/evaluation.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "blas.hpp"
#include "milens/adam.hpp"
#include "milens/error.hpp"
#include "milens/rng.hpp"
#include "milens/tape.hpp"

namespace milens {

namespace {

// Per-feature standardization with train statistics; constant features are
// left centered at zero.
void standardize(std::vector<double>& train, std::vector<double>& test, int64_t dim) {
  const int64_t n_train = static_cast<int64_t>(train.size()) / dim;
  const int64_t n_test = static_cast<int64_t>(test.size()) / dim;
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  std::vector<double> var(static_cast<size_t>(dim), 0.0);
  for (int64_t i = 0; i < n_train; ++i)
    for (int64_t j = 0; j < dim; ++j) mean[static_cast<size_t>(j)] += train[static_cast<size_t>(i * dim + j)];
  for (double& m : mean) m /= static_cast<double>(n_train);
  for (int64_t i = 0; i < n_train; ++i)
    for (int64_t j = 0; j < dim; ++j) {
      const double d = train[static_cast<size_t>(i * dim + j)] - mean[static_cast<size_t>(j)];
      var[static_cast<size_t>(j)] += d * d;
    }
  std::vector<double> scale(static_cast<size_t>(dim));
  for (int64_t j = 0; j < dim; ++j) {
    const double sd = std::sqrt(var[static_cast<size_t>(j)] / static_cast<double>(n_train));
    scale[static_cast<size_t>(j)] = sd > 1e-8 ? 1.0 / sd : 0.0;
  }
  auto apply = [&](std::vector<double>& m, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dim; ++j) {
        auto& v = m[static_cast<size_t>(i * dim + j)];
        v = (v - mean[static_cast<size_t>(j)]) * scale[static_cast<size_t>(j)];
      }
  };
  apply(train, n_train);
  apply(test, n_test);
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad_w;
  std::vector<double> grad_b;
  double grad_max_norm = 0.0;
};

// Multinomial logistic loss (mean over samples) + 0.5 * l2 * ||W||^2.
double probe_loss(const std::vector<double>& x, const std::vector<int>& labels, int64_t n,
                  int64_t d, int64_t c, const std::vector<double>& w, const std::vector<double>& b,
                  double l2, std::vector<double>* scores_out) {
  std::vector<double>& scores = *scores_out;
  scores.resize(static_cast<size_t>(n * c));
  detail::gemm(false, false, static_cast<int>(n), static_cast<int>(c), static_cast<int>(d), 1.0,
               x.data(), w.data(), 0.0, scores.data());
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t k = 0; k < c; ++k) {
      scores[static_cast<size_t>(i * c + k)] += b[static_cast<size_t>(k)];
      mx = std::max(mx, scores[static_cast<size_t>(i * c + k)]);
    }
    double denom = 0.0;
    for (int64_t k = 0; k < c; ++k) denom += std::exp(scores[static_cast<size_t>(i * c + k)] - mx);
    const double lse = mx + std::log(denom);
    loss += lse - scores[static_cast<size_t>(i * c + labels[static_cast<size_t>(i)])];
    // Convert scores row to softmax in place for the gradient pass.
    for (int64_t k = 0; k < c; ++k)
      scores[static_cast<size_t>(i * c + k)] = std::exp(scores[static_cast<size_t>(i * c + k)] - lse);
  }
  loss /= static_cast<double>(n);
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return loss + 0.5 * l2 * reg;
}

LossGrad probe_loss_grad(const std::vector<double>& x, const std::vector<int>& labels, int64_t n,
                         int64_t d, int64_t c, const std::vector<double>& w,
                         const std::vector<double>& b, double l2) {
  LossGrad out;
  std::vector<double> probs;
  out.loss = probe_loss(x, labels, n, d, c, w, b, l2, &probs);
  for (int64_t i = 0; i < n; ++i) probs[static_cast<size_t>(i * c + labels[static_cast<size_t>(i)])] -= 1.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& p : probs) p *= inv_n;
  out.grad_w.assign(w.size(), 0.0);
  detail::gemm(true, false, static_cast<int>(d), static_cast<int>(c), static_cast<int>(n), 1.0,
               x.data(), probs.data(), 0.0, out.grad_w.data());
  for (size_t i = 0; i < w.size(); ++i) out.grad_w[i] += l2 * w[i];
  out.grad_b.assign(static_cast<size_t>(c), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) out.grad_b[static_cast<size_t>(k)] += probs[static_cast<size_t>(i * c + k)];
  for (double g : out.grad_w) out.grad_max_norm = std::max(out.grad_max_norm, std::fabs(g));
  for (double g : out.grad_b) out.grad_max_norm = std::max(out.grad_max_norm, std::fabs(g));
  return out;
}

double accuracy_and_loss(const std::vector<double>& x, const std::vector<int>& labels, int64_t n,
                         int64_t d, int64_t c, const std::vector<double>& w,
                         const std::vector<double>& b, double* log_loss_out) {
  std::vector<double> scores(static_cast<size_t>(n * c));
  detail::gemm(false, false, static_cast<int>(n), static_cast<int>(c), static_cast<int>(d), 1.0,
               x.data(), w.data(), 0.0, scores.data());
  int64_t correct = 0;
  double log_loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    int64_t arg = 0;
    for (int64_t k = 0; k < c; ++k) {
      scores[static_cast<size_t>(i * c + k)] += b[static_cast<size_t>(k)];
      if (scores[static_cast<size_t>(i * c + k)] > mx) {
        mx = scores[static_cast<size_t>(i * c + k)];
        arg = k;
      }
    }
    if (arg == labels[static_cast<size_t>(i)]) ++correct;
    double denom = 0.0;
    for (int64_t k = 0; k < c; ++k) denom += std::exp(scores[static_cast<size_t>(i * c + k)] - mx);
    log_loss += mx + std::log(denom) - scores[static_cast<size_t>(i * c + labels[static_cast<size_t>(i)])];
  }
  if (log_loss_out) *log_loss_out = log_loss / static_cast<double>(n);
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

ProbeResult train_probe(const std::vector<double>& train_x_in,
                        const std::vector<int>& train_labels, const std::vector<double>& test_x_in,
                        const std::vector<int>& test_labels, int64_t dim,
                        const ProbeSettings& settings) {
  const int64_t n = static_cast<int64_t>(train_labels.size());
  const int64_t m = static_cast<int64_t>(test_labels.size());
  const int64_t c = settings.classes;
  std::vector<double> train_x = train_x_in;
  std::vector<double> test_x = test_x_in;
  standardize(train_x, test_x, dim);

  std::vector<double> w(static_cast<size_t>(dim * c), 0.0);
  std::vector<double> b(static_cast<size_t>(c), 0.0);
  std::vector<double> probs;
  ProbeResult result;
  double lr = settings.initial_lr;
  double current = probe_loss(train_x, train_labels, n, dim, c, w, b, settings.l2_penalty, &probs);
  for (int64_t epoch = 0; epoch < settings.max_epochs; ++epoch) {
    result.epochs = epoch + 1;
    LossGrad lg = probe_loss_grad(train_x, train_labels, n, dim, c, w, b, settings.l2_penalty);
    current = lg.loss;
    if (lg.grad_max_norm < settings.grad_tolerance) {
      result.converged = true;
      break;
    }
    // Backtracking halving from the last accepted step size.
    std::vector<double> w_try(w.size()), b_try(b.size());
    double next = 0.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      for (size_t i = 0; i < w.size(); ++i) w_try[i] = w[i] - lr * lg.grad_w[i];
      for (size_t i = 0; i < b.size(); ++i) b_try[i] = b[i] - lr * lg.grad_b[i];
      next = probe_loss(train_x, train_labels, n, dim, c, w_try, b_try, settings.l2_penalty,
                        &probs);
      if (next < current) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;  // cannot decrease: treat as converged-with-warning
    w.swap(w_try);
    b.swap(b_try);
    current = next;
    lr = std::min(lr * 2.0, settings.initial_lr);
  }
  result.train_log_loss = current;
  result.test_accuracy = accuracy_and_loss(test_x, test_labels, m, dim, c, w, b,
                                           &result.test_log_loss);
  return result;
}

std::vector<double> encode_all(const Encoder& encoder, const std::vector<double>& inputs,
                               int64_t dim_in, int64_t batch) {
  const int64_t n = static_cast<int64_t>(inputs.size()) / dim_in;
  const int64_t dim_out = encoder.out_dim();
  std::vector<double> out(static_cast<size_t>(n * dim_out));
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t count = std::min(batch, n - start);
    Tape tape;
    tape.freeze_params(true);
    NodeId x = tape.input({count, dim_in},
                          std::span<const double>(&inputs[static_cast<size_t>(start * dim_in)],
                                                  static_cast<size_t>(count * dim_in)));
    NodeId z = encoder.encode(tape, x);
    auto v = tape.value(z);
    std::memcpy(&out[static_cast<size_t>(start * dim_out)], v.data(),
                v.size() * sizeof(double));
  }
  return out;
}

ProbeResult linear_eval(const Encoder& encoder, const ViewPairDataset& dataset, uint64_t noise_tag,
                        const ProbeSettings& settings) {
  std::vector<double> train1, train2, test1, test2;
  dataset.materialize(Split::kTrain, Rng::mix({noise_tag, 0x7472ull}), train1, train2);
  dataset.materialize(Split::kTest, Rng::mix({noise_tag, 0x7465ull}), test1, test2);
  const std::vector<double> train_reps = encode_all(encoder, train1, dataset.dim1());
  const std::vector<double> test_reps = encode_all(encoder, test1, dataset.dim1());
  return train_probe(train_reps, dataset.labels(Split::kTrain), test_reps,
                     dataset.labels(Split::kTest), encoder.out_dim(), settings);
}

SupervisedResult supervised_reference(const ViewPairDataset& dataset,
                                      const SupervisedConfig& config) {
  if (config.architecture != EncoderKind::kMlp && config.architecture != EncoderKind::kConvNet)
    throw ConfigError("supervised_reference: architecture must be mlp or convnet");
  ParamStore store;
  Rng init_rng(Rng::mix({config.seed, 0x737570ull}));
  auto encoder = make_encoder(config.architecture, store, "encoder", dataset.view1_geometry(),
                              init_rng);
  Param& head_w = store.create_dense_init("head/W", {encoder->out_dim(), 10}, encoder->out_dim(),
                                          10, init_rng);
  Param& head_b = store.create("head/b", {10});
  std::vector<Param*> params;
  for (auto& p : store) params.push_back(&p);
  Adam adam(params);

  BatchIterator batches(dataset, Split::kTrain, config.batch_size,
                        Rng::mix({config.seed, 0x646174ull}));
  Batch batch;
  SupervisedResult result;
  for (int64_t step = 0; step < config.iterations; ++step) {
    batches.next(batch);
    Tensor targets({batch.size, 10});
    for (int64_t i = 0; i < batch.size; ++i)
      targets.data[static_cast<size_t>(i * 10 + batch.labels[static_cast<size_t>(i)])] = 1.0;
    Tape tape;
    NodeId reps = encoder->encode(tape, tape.input(batch.view1));
    NodeId logits = tape.bias_add(tape.matmul(reps, tape.param(head_w)), tape.param(head_b));
    NodeId loss = tape.softmax_cross_entropy(logits, targets);
    result.final_train_loss = tape.scalar(loss);
    tape.backward(loss);
    adam.step(config.learning_rate);
  }

  // Accuracy of the trained encoder + head on the test split.
  std::vector<double> test1, test2;
  dataset.materialize(Split::kTest, Rng::mix({config.seed, 0x746573ull}), test1, test2);
  const std::vector<double> reps = encode_all(*encoder, test1, dataset.dim1());
  const auto& labels = dataset.labels(Split::kTest);
  const int64_t n = static_cast<int64_t>(labels.size());
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double* r = &reps[static_cast<size_t>(i * encoder->out_dim())];
    double best = -std::numeric_limits<double>::infinity();
    int64_t arg = 0;
    for (int64_t k = 0; k < 10; ++k) {
      double s = head_b.value.data[static_cast<size_t>(k)];
      for (int64_t j = 0; j < encoder->out_dim(); ++j)
        s += r[j] * head_w.value.data[static_cast<size_t>(j * 10 + k)];
      if (s > best) {
        best = s;
        arg = k;
      }
    }
    if (arg == labels[static_cast<size_t>(i)]) ++correct;
  }
  result.test_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

std::vector<double> singular_values(const Tensor& matrix) {
  if (matrix.shape.size() != 2) throw ShapeError("singular_values: need a matrix");
  const auto m = static_cast<lapack_int>(matrix.shape[0]);
  const auto n = static_cast<lapack_int>(matrix.shape[1]);
  std::vector<double> a = matrix.data;  // dgesdd overwrites
  std::vector<double> sigma(static_cast<size_t>(std::min(m, n)));
  const lapack_int info = LAPACKE_dgesdd(LAPACK_ROW_MAJOR, 'N', m, n, a.data(), n, sigma.data(),
                                         nullptr, std::max<lapack_int>(1, m), nullptr,
                                         std::max<lapack_int>(1, n));
  if (info != 0) throw NumericError("singular_values: dgesdd failed with info " + std::to_string(info));
  return sigma;
}

double condition_number(const Tensor& jacobian_matrix) {
  const std::vector<double> sigma = singular_values(jacobian_matrix);
  const double smax = sigma.front();
  const double smin = sigma.back();
  if (smin < 1e-300) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

ConditionSummary condition_percentiles(const Encoder& encoder, const ViewPairDataset& dataset,
                                       int64_t n_inputs, uint64_t seed, uint64_t noise_tag) {
  const int64_t n = dataset.count(Split::kTrain);
  Rng rng(Rng::mix({seed, 0x636f6e64ull}));
  std::vector<int64_t> indices(static_cast<size_t>(n_inputs));
  for (auto& idx : indices) idx = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));

  std::vector<double> x1(static_cast<size_t>(n_inputs * dataset.dim1()));
  std::vector<double> x2(static_cast<size_t>(n_inputs * dataset.dim2()));
  dataset.gather(Split::kTrain, indices, Rng::mix({noise_tag, 0x6b61ull}), x1.data(), x2.data(),
                 nullptr);

  std::vector<double> kappas(static_cast<size_t>(n_inputs));
  ConditionSummary summary;
  for (int64_t i = 0; i < n_inputs; ++i) {
    Tensor x({1, dataset.dim1()},
             std::vector<double>(x1.begin() + i * dataset.dim1(),
                                 x1.begin() + (i + 1) * dataset.dim1()));
    const double kappa = condition_number(jacobian(encoder, x));
    if (std::isinf(kappa)) ++summary.infinite_count;
    kappas[static_cast<size_t>(i)] = kappa;
  }
  std::sort(kappas.begin(), kappas.end());
  auto percentile = [&](double p) {
    const double pos = p / 100.0 * static_cast<double>(n_inputs - 1);
    const auto lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, kappas.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return kappas[lo] * (1.0 - frac) + kappas[hi] * frac;
  };
  for (int i = 0; i < 6; ++i) summary.percentiles[static_cast<size_t>(i)] = percentile(20.0 * i);
  summary.median = percentile(50.0);
  return summary;
}

}  // namespace milens
