#include "milens/experiments.hpp"

#include <cblas.h>

#include <cmath>
#include <memory>

#include "milens/adam.hpp"
#include "milens/checkpoint.hpp"
#include "milens/error.hpp"
#include "milens/evaluation.hpp"

namespace milens {

namespace {

struct ViewModels {
  ParamStore store;
  std::unique_ptr<Encoder> g1;
  std::unique_ptr<Encoder> g2;
  std::unique_ptr<Critic> critic;
};

ViewModels build_models(const ExperimentConfig& config, const ViewPairDataset& dataset,
                        uint64_t seed, bool with_critic) {
  ViewModels models;
  Rng rng1(Rng::mix({seed, 0x6731ull}));
  models.g1 = make_encoder(config.encoder_view1, models.store, "g1", dataset.view1_geometry(),
                           rng1);
  Rng rng2(Rng::mix({seed, 0x6732ull}));
  // Both views share geometry (equal-size halves); the encoder kind may differ.
  models.g2 = make_encoder(config.encoder_view2, models.store, "g2", dataset.view1_geometry(),
                           rng2);
  if (with_critic) {
    Rng rngc(Rng::mix({seed, 0x637269ull}));
    models.critic = make_critic(*config.critic, models.store, "critic", models.g1->out_dim(),
                                models.g2->out_dim(), rngc);
  }
  return models;
}

// Mean estimator value over n seeded evaluation batches; parameters frozen.
double eval_estimator_mean(const ViewModels& models, const ExperimentConfig& config,
                           const ViewPairDataset& dataset, Split split) {
  BatchIterator batches(dataset, split, config.batch_size,
                        Rng::mix({config.seed, 0x6576616cull, split == Split::kTrain ? 0ull : 1ull}));
  Batch batch;
  double total = 0.0;
  for (int64_t b = 0; b < config.eval_batches; ++b) {
    batches.next(batch);
    Tape tape;
    tape.freeze_params(true);
    NodeId reps1 = models.g1->encode(tape, tape.input(batch.view1));
    NodeId reps2 = models.g2->encode(tape, tape.input(batch.view2));
    NodeId scores = models.critic->score_matrix(tape, reps1, reps2);
    total += tape.scalar(estimate(tape, *config.estimator, scores));
  }
  return total / static_cast<double>(config.eval_batches);
}

// Max-norm round-trip error of a flow encoder on one seeded test batch.
double flow_roundtrip_error(const Encoder& encoder, const ExperimentConfig& config,
                            const ViewPairDataset& dataset, bool view2) {
  BatchIterator batches(dataset, Split::kTest, std::min<int64_t>(config.batch_size, 64),
                        Rng::mix({config.seed, 0x726f756eull}));
  Batch batch;
  batches.next(batch);
  const Tensor& x = view2 ? batch.view2 : batch.view1;
  Tensor z = encoder.apply(x);
  Tensor back = encoder.decode(z);
  double err = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i)
    err = std::max(err, std::fabs(x.data[i] - back.data[i]));
  return err;
}

bool is_eval_point(int64_t iteration, int64_t every, int64_t total) {
  return iteration % every == 0 || iteration == total;
}

struct DiagnosticsEmitter {
  const ExperimentConfig& config;
  const ViewPairDataset& dataset;
  MetricsWriter& metrics;
  RunOutcome& outcome;

  void probe_and_diagnostics(const ViewModels& models, int64_t iteration) {
    const ProbeResult probe =
        linear_eval(*models.g1, dataset, Rng::mix({config.seed, 0x70726f62ull}));
    metrics.append(iteration, "test", "probe_accuracy", probe.test_accuracy, config.seed);
    metrics.append(iteration, "test", "probe_log_loss", probe.test_log_loss, config.seed);
    metrics.append(iteration, "test", "probe_converged", probe.converged ? 1.0 : 0.0,
                   config.seed);
    outcome.final_probe_accuracy = probe.test_accuracy;
    outcome.probe_ran = true;

    if (config.diag_condition_number) {
      const ConditionSummary cond =
          condition_percentiles(*models.g1, dataset, config.condition_inputs,
                                Rng::mix({config.seed, 0x636f6eull, static_cast<uint64_t>(iteration)}),
                                Rng::mix({config.seed, 0x636e6full}));
      const char* names[6] = {"cond_p0", "cond_p20", "cond_p40", "cond_p60", "cond_p80",
                              "cond_p100"};
      for (int i = 0; i < 6; ++i)
        metrics.append(iteration, "train", names[i], cond.percentiles[static_cast<size_t>(i)],
                       config.seed);
      metrics.append(iteration, "train", "cond_median", cond.median, config.seed);
    }
    if (config.diag_flow_roundtrip) {
      if (models.g1->invertible() && models.g1->kind() == EncoderKind::kRealNvp) {
        const double err = flow_roundtrip_error(*models.g1, config, dataset, false);
        metrics.append(iteration, "test", "flow_roundtrip_error", err, config.seed);
        if (err > 1e-6)
          throw NumericError("flow round-trip error " + std::to_string(err) +
                             " exceeds 1e-6 at iteration " + std::to_string(iteration));
      }
      if (models.g2->invertible() && models.g2->kind() == EncoderKind::kRealNvp) {
        const double err = flow_roundtrip_error(*models.g2, config, dataset, true);
        metrics.append(iteration, "test", "flow_roundtrip_error_g2", err, config.seed);
        if (err > 1e-6)
          throw NumericError("flow round-trip error (g2) " + std::to_string(err) +
                             " exceeds 1e-6 at iteration " + std::to_string(iteration));
      }
    }
  }
};

RunOutcome run_views_training(const ExperimentConfig& config, MetricsWriter& metrics,
                              const std::string& checkpoint_path) {
  ViewPairDataset dataset =
      load_view_pairs(config.dataset, config.data_dir, config.noise, config.seed);
  ViewModels models = build_models(config, dataset, config.seed, /*with_critic=*/true);
  std::vector<Param*> params;
  for (auto& p : models.store) params.push_back(&p);
  Adam adam(params);

  BatchIterator batches(dataset, Split::kTrain, config.batch_size,
                        Rng::mix({config.seed, 0x747261696eull}));
  Batch batch;
  RunOutcome outcome;
  DiagnosticsEmitter diag{config, dataset, metrics, outcome};

  for (int64_t iteration = 0; iteration <= config.iterations; ++iteration) {
    if (is_eval_point(iteration, config.eval_every, config.iterations)) {
      const double train_est = eval_estimator_mean(models, config, dataset, Split::kTrain);
      const double test_est = eval_estimator_mean(models, config, dataset, Split::kTest);
      metrics.append(iteration, "train", "i_est", train_est, config.seed);
      metrics.append(iteration, "test", "i_est", test_est, config.seed);
      outcome.final_test_estimate = test_est;
      outcome.final_iteration = iteration;
      metrics.flush();
    }
    if (is_eval_point(iteration, config.probe_every, config.iterations)) {
      diag.probe_and_diagnostics(models, iteration);
      metrics.flush();
    }
    if (iteration == config.iterations) break;

    batches.next(batch);
    Tape tape;
    NodeId reps1 = models.g1->encode(tape, tape.input(batch.view1));
    NodeId reps2 = models.g2->encode(tape, tape.input(batch.view2));
    NodeId scores = models.critic->score_matrix(tape, reps1, reps2);
    NodeId loss;
    if (config.objective == ObjectiveKind::kMaximize) {
      loss = tape.scale(estimate(tape, *config.estimator, scores), -1.0);
    } else {
      loss = target_loss(tape, *config.estimator, scores, config.target);
    }
    const double loss_value = tape.scalar(loss);
    if (!std::isfinite(loss_value))
      throw NumericError("non-finite loss at iteration " + std::to_string(iteration));
    tape.backward(loss);
    adam.step(config.learning_rate);
  }

  if (!checkpoint_path.empty()) save_checkpoint(models.store, checkpoint_path);
  return outcome;
}

RunOutcome run_adversarial_training(const ExperimentConfig& config, MetricsWriter& metrics,
                                    const std::string& checkpoint_path) {
  ViewPairDataset dataset =
      load_view_pairs(config.dataset, config.data_dir, config.noise, config.seed);
  ViewModels models = build_models(config, dataset, config.seed, /*with_critic=*/false);
  Rng head_rng(Rng::mix({config.seed, 0x68656164ull}));
  Param& head_w = models.store.create_dense_init("head/W", {models.g1->out_dim(), 10},
                                                 models.g1->out_dim(), 10, head_rng);
  Param& head_b = models.store.create("head/b", {10});

  std::vector<Param*> encoder_params, head_params{&head_w, &head_b};
  for (auto& p : models.store)
    if (p.name.rfind("g1", 0) == 0) encoder_params.push_back(&p);
  Adam head_adam(head_params);
  Adam encoder_adam(encoder_params);

  BatchIterator batches(dataset, Split::kTrain, config.batch_size,
                        Rng::mix({config.seed, 0x747261696eull}));
  Batch batch;
  RunOutcome outcome;
  DiagnosticsEmitter diag{config, dataset, metrics, outcome};

  const Tensor uniform_targets({config.batch_size, 10},
                               std::vector<double>(static_cast<size_t>(config.batch_size * 10), 0.1));

  // 1. Head logits on the frozen encoder; cross-entropy against true labels.
  auto head_step = [&]() {
    batches.next(batch);
    Tensor targets({batch.size, 10});
    for (int64_t i = 0; i < batch.size; ++i)
      targets.data[static_cast<size_t>(i * 10 + batch.labels[static_cast<size_t>(i)])] = 1.0;
    Tape tape;
    tape.freeze_params(true);
    NodeId reps = models.g1->encode(tape, tape.input(batch.view1));
    tape.freeze_params(false);
    NodeId logits = tape.bias_add(tape.matmul(reps, tape.param(head_w)), tape.param(head_b));
    NodeId loss = tape.softmax_cross_entropy(logits, targets);
    const double value = tape.scalar(loss);
    if (!std::isfinite(value)) throw NumericError("non-finite head loss");
    tape.backward(loss);
    head_adam.step(config.learning_rate);
    return value;
  };

  // 2. Encoder update against the frozen head; cross-entropy toward uniform.
  auto encoder_step = [&]() {
    batches.next(batch);
    Tape tape;
    NodeId reps = models.g1->encode(tape, tape.input(batch.view1));
    tape.freeze_params(true);
    NodeId logits = tape.bias_add(tape.matmul(reps, tape.param(head_w)), tape.param(head_b));
    tape.freeze_params(false);
    NodeId loss = tape.softmax_cross_entropy(logits, uniform_targets);
    const double value = tape.scalar(loss);
    if (!std::isfinite(value)) throw NumericError("non-finite encoder loss");
    tape.backward(loss);
    encoder_adam.step(config.encoder_learning_rate);
    return value;
  };

  for (int64_t warm = 0; warm < config.adversarial_warmup; ++warm) head_step();

  for (int64_t iteration = 0; iteration <= config.iterations; ++iteration) {
    if (is_eval_point(iteration, config.probe_every, config.iterations)) {
      diag.probe_and_diagnostics(models, iteration);
      outcome.final_iteration = iteration;
      metrics.flush();
    }
    if (iteration == config.iterations) break;
    double head_loss = 0.0;
    for (int64_t s = 0; s < config.adversarial_head_steps; ++s) head_loss = head_step();
    const double encoder_loss = encoder_step();
    if (is_eval_point(iteration + 1, config.eval_every, config.iterations)) {
      metrics.append(iteration + 1, "train", "head_loss", head_loss, config.seed);
      metrics.append(iteration + 1, "train", "encoder_loss", encoder_loss, config.seed);
    }
  }

  if (!checkpoint_path.empty()) save_checkpoint(models.store, checkpoint_path);
  return outcome;
}

RunOutcome run_gauss_bias(const ExperimentConfig& config, MetricsWriter& metrics) {
  BiasRunConfig bias;
  bias.batch_size = config.batch_size;
  bias.steps = config.iterations;
  bias.learning_rate = config.learning_rate;
  const GaussSetup setup = reference_gauss_setup();
  const BiasRunResult result =
      run_bias_experiment(setup, *config.estimator, config.gauss_mode, config.seed, bias);
  metrics.append(0, "train", "true_mi", result.true_mi, config.seed);
  for (const auto& point : result.trace) {
    metrics.append(point.step + 1, "train", "i_est", point.estimate, config.seed);
    metrics.append(point.step + 1, "train", "i_est_smoothed", point.running_mean, config.seed);
  }
  metrics.append(config.iterations + 2, "train", "i_est_final_mean", result.final_running_mean,
                 config.seed);
  metrics.append(config.iterations + 2, "train", "i_est_final_se", result.final_standard_error,
                 config.seed);
  RunOutcome outcome;
  outcome.final_iteration = result.steps;
  outcome.final_test_estimate = result.final_running_mean;
  return outcome;
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& config, MetricsWriter& metrics,
                          const std::string& checkpoint_path) {
  openblas_set_num_threads(static_cast<int>(config.threads));
  switch (config.experiment) {
    case ExperimentKind::kGaussBias:
      return run_gauss_bias(config, metrics);
    case ExperimentKind::kViews:
      if (config.objective == ObjectiveKind::kAdversarial)
        return run_adversarial_training(config, metrics, checkpoint_path);
      return run_views_training(config, metrics, checkpoint_path);
  }
  throw Error("run_experiment: unreachable");
}

}  // namespace milens
