#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gauss_hermite.hpp"
#include "milens/error.hpp"
#include "milens/gaussian.hpp"

using namespace milens;
using namespace milens::testing;

TEST_CASE("analytic MI of a diagonal covariance is zero") {
  CHECK(analytic_mi({2.0, 0.0, 0.0, 3.0}) == 0.0);
}

TEST_CASE("analytic MI on the reference covariances") {
  const GaussSetup setup = reference_gauss_setup();
  const Cov2 total = setup.total();
  CHECK(total[0] == 2.0);
  CHECK(total[1] == doctest::Approx(0.4).epsilon(1e-15));
  // -1/2 log(0.96)
  CHECK(analytic_mi(total) == doctest::Approx(0.020410997260127406).epsilon(1e-12));
}

TEST_CASE("analytic MI is symmetric in the sign of the correlation") {
  for (double rho : {0.1, 0.35, 0.8}) {
    CHECK(analytic_mi({1.0, rho, rho, 1.0}) ==
          doctest::Approx(analytic_mi({1.0, -rho, -rho, 1.0})).epsilon(1e-15));
  }
}

TEST_CASE("analytic MI rejects singular or non-SPD input") {
  CHECK_THROWS_AS(analytic_mi({1.0, 1.0, 1.0, 1.0}), Error);
  CHECK_THROWS_AS(analytic_mi({1.0, 0.3, 0.2, 1.0}), ConfigError);  // asymmetric
  CHECK_THROWS_AS(GaussSetup({1.0, 2.0, 2.0, 1.0}, {1.0, 0.0, 0.0, 1.0}), ConfigError);
}

TEST_CASE("analytic MI matches Gauss-Hermite quadrature of the KL integrand") {
  // Fixed spot checks plus 20 random SPD covariances.
  CHECK(std::fabs(analytic_mi({2.0, 0.4, 0.4, 2.0}) - quadrature_mi({2.0, 0.4, 0.4, 2.0})) <
        1e-9);
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const double v1 = rng.uniform(0.3, 3.0);
    const double v2 = rng.uniform(0.3, 3.0);
    const double rho = rng.uniform(-0.9, 0.9);
    const double cross = rho * std::sqrt(v1 * v2);
    const Cov2 cov = {v1, cross, cross, v2};
    CAPTURE(trial);
    CHECK(std::fabs(analytic_mi(cov) - quadrature_mi(cov)) < 1e-6);
  }
}

TEST_CASE("shared-Z sampling with zero noise gives identical batch elements") {
  GaussSetup setup({1.0, -0.5, -0.5, 1.0}, {0.0, 0.0, 0.0, 0.0});
  Rng rng(5);
  GaussBatch batch = sample_batch(setup, 16, SampleMode::kSharedZ, rng);
  for (int i = 1; i < 16; ++i) {
    CHECK(batch.xs[static_cast<size_t>(i)] == batch.xs[0]);
    CHECK(batch.ys[static_cast<size_t>(i)] == batch.ys[0]);
  }
}

TEST_CASE("same seed reproduces the same batch") {
  const GaussSetup setup = reference_gauss_setup();
  Rng a(123), b(123), c(124);
  GaussBatch ba = sample_batch(setup, 32, SampleMode::kIid, a);
  GaussBatch bb = sample_batch(setup, 32, SampleMode::kIid, b);
  GaussBatch bc = sample_batch(setup, 32, SampleMode::kIid, c);
  CHECK(ba.xs == bb.xs);
  CHECK(ba.ys == bb.ys);
  CHECK(ba.xs != bc.xs);
}

TEST_CASE("sample_batch requires K >= 2") {
  const GaussSetup setup = reference_gauss_setup();
  Rng rng(1);
  CHECK_THROWS_AS(sample_batch(setup, 1, SampleMode::kIid, rng), ConfigError);
}

TEST_CASE("both sampling modes reproduce the total covariance empirically") {
  const GaussSetup setup = reference_gauss_setup();
  const Cov2 expected = setup.total();
  for (SampleMode mode : {SampleMode::kIid, SampleMode::kSharedZ}) {
    Rng rng(42);
    double sxx = 0, syy = 0, sxy = 0, sx = 0, sy = 0;
    int64_t n = 0;
    // Shared-Z batches are internally correlated, so average over many small
    // batches to keep the effective sample count meaningful.
    const int64_t batches = 12500, k = 8;
    for (int64_t b = 0; b < batches; ++b) {
      GaussBatch batch = sample_batch(setup, k, mode, rng);
      for (int64_t i = 0; i < k; ++i) {
        const double x = batch.xs[static_cast<size_t>(i)];
        const double y = batch.ys[static_cast<size_t>(i)];
        sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
        ++n;
      }
    }
    const double nn = static_cast<double>(n);
    const double mx = sx / nn, my = sy / nn;
    const double cxx = sxx / nn - mx * mx;
    const double cyy = syy / nn - my * my;
    const double cxy = sxy / nn - mx * my;
    CAPTURE(to_string(mode));
    CHECK(cxx == doctest::Approx(expected[0]).epsilon(0.05));
    CHECK(cyy == doctest::Approx(expected[3]).epsilon(0.05));
    CHECK(cxy == doctest::Approx(expected[1]).scale(1.0).epsilon(0.15));
  }
}

TEST_CASE("bias experiment starts at zero estimate for InfoNCE") {
  // Zero-initialized critic output layer: the score matrix is constant at
  // step 0, so the first recorded InfoNCE estimate is exactly 0.
  const GaussSetup setup = reference_gauss_setup();
  BiasRunConfig config;
  config.steps = 1;
  config.record_every = 1;
  const BiasRunResult result =
      run_bias_experiment(setup, EstimatorKind::kInfoNce, SampleMode::kIid, 9, config);
  REQUIRE(!result.trace.empty());
  CHECK(result.trace.front().estimate == 0.0);
  CHECK(result.true_mi == doctest::Approx(0.020410997260127406).epsilon(1e-12));
}

TEST_CASE("bias experiment rejects K with log K below the true MI") {
  const GaussSetup setup = reference_gauss_setup();
  BiasRunConfig config;
  config.batch_size = 2;  // log 2 = 0.69 > MI, fine; craft a high-MI setup instead
  GaussSetup high_mi({1.0, 0.999, 0.999, 1.0}, {1e-6, 0.0, 0.0, 1e-6});
  CHECK_THROWS_AS(
      run_bias_experiment(high_mi, EstimatorKind::kInfoNce, SampleMode::kIid, 1,
                          [] { BiasRunConfig c; c.batch_size = 2; c.steps = 1; return c; }()),
      ConfigError);
  (void)config;
  (void)setup;
}

TEST_CASE("short bias runs are reproducible and record increasing steps") {
  const GaussSetup setup = reference_gauss_setup();
  BiasRunConfig config;
  config.steps = 30;
  config.batch_size = 16;
  config.record_every = 10;
  const auto a = run_bias_experiment(setup, EstimatorKind::kNwj, SampleMode::kSharedZ, 3, config);
  const auto b = run_bias_experiment(setup, EstimatorKind::kNwj, SampleMode::kSharedZ, 3, config);
  REQUIRE(a.trace.size() == b.trace.size());
  for (size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].estimate == b.trace[i].estimate);
    if (i) CHECK(a.trace[i].step > a.trace[i - 1].step);
  }
}
