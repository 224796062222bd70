#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "milens/estimators.hpp"
#include "milens/gaussian.hpp"

using namespace milens;

namespace {

struct Point {
  double x, y;
};

double dist(const Point& a, const Point& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

// Ordered within-group distance sum for the index set [lo, hi) of `order`.
double within_sum(const std::vector<Point>& pool, const std::vector<int>& order, size_t lo,
                  size_t hi) {
  double s = 0.0;
  for (size_t i = lo; i < hi; ++i)
    for (size_t j = i + 1; j < hi; ++j) s += dist(pool[static_cast<size_t>(order[i])],
                                                  pool[static_cast<size_t>(order[j])]);
  return 2.0 * s;
}

// Two-sample energy statistic via the pooled-sum identity:
// E = (S_pool - 2 S_AA - 2 S_BB) / n^2 for equal group sizes n.
double energy_statistic(const std::vector<Point>& pool, const std::vector<int>& order, size_t n,
                        double pool_sum) {
  const double s_aa = within_sum(pool, order, 0, n);
  const double s_bb = within_sum(pool, order, n, 2 * n);
  return (pool_sum - 2.0 * s_aa - 2.0 * s_bb) / (static_cast<double>(n) * static_cast<double>(n));
}

// One element per batch: elements of a shared-Z batch are dependent, and the
// permutation null requires exchangeable samples. A single element per batch
// has exactly the per-element marginal law and is independent across batches.
std::vector<Point> draw_marginal_samples(SampleMode mode, size_t n, uint64_t seed) {
  const GaussSetup setup = reference_gauss_setup();
  Rng rng(seed);
  std::vector<Point> out;
  out.reserve(n);
  while (out.size() < n) {
    GaussBatch batch = sample_batch(setup, 128, mode, rng);
    const size_t pick = static_cast<size_t>(rng.uniform_int(batch.xs.size()));
    out.push_back({batch.xs[pick], batch.ys[pick]});
  }
  return out;
}

}  // namespace

TEST_CASE("iid and shared-Z samplers share the per-element marginal law") {
  // Energy-distance permutation test at alpha = 0.01 with 99 permutations on
  // 10^4 samples per group: reject only if the observed statistic beats every
  // permuted one.
  const size_t n = 10000;
  std::vector<Point> pool = draw_marginal_samples(SampleMode::kIid, n, 101);
  {
    auto b = draw_marginal_samples(SampleMode::kSharedZ, n, 202);
    pool.insert(pool.end(), b.begin(), b.end());
  }

  double pool_sum = 0.0;
  {
    // S_pool is permutation-invariant; computed once, in parallel halves.
    auto partial = [&](size_t lo, size_t hi, double* out) {
      double s = 0.0;
      for (size_t i = lo; i < hi; ++i)
        for (size_t j = i + 1; j < pool.size(); ++j) s += dist(pool[i], pool[j]);
      *out = s;
    };
    double s1 = 0.0, s2 = 0.0;
    const size_t split = pool.size() * 30 / 100;  // balances the triangular loop
    std::thread t1(partial, 0, split, &s1);
    partial(split, pool.size(), &s2);
    t1.join();
    pool_sum = 2.0 * (s1 + s2);
  }

  std::vector<int> identity_order(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) identity_order[i] = static_cast<int>(i);
  const double observed = energy_statistic(pool, identity_order, n, pool_sum);

  const int permutations = 99;
  std::vector<double> perm_stats(permutations);
  auto worker = [&](int lo, int hi) {
    for (int p = lo; p < hi; ++p) {
      Rng rng(Rng::mix({777, static_cast<uint64_t>(p)}));
      std::vector<int> order = identity_order;
      rng.shuffle(order);
      perm_stats[static_cast<size_t>(p)] = energy_statistic(pool, order, n, pool_sum);
    }
  };
  std::thread t(worker, 0, permutations / 2);
  worker(permutations / 2, permutations);
  t.join();

  int at_least = 0;
  for (double s : perm_stats)
    if (s >= observed) ++at_least;
  const double p_value = (1.0 + at_least) / (permutations + 1.0);
  INFO("observed " << observed << ", p-value " << p_value);
  CHECK(p_value > 0.01);
}

TEST_CASE("NWJ with the analytic optimal critic is tight at the closed-form MI") {
  // Critic f*(x, y) = 1 + log p(y|x)/p(y) evaluated on i.i.d. batches; the
  // batch estimate averaged over >= 1e5 samples must sit within 3 Monte Carlo
  // standard errors of the analytic MI.
  const GaussSetup setup = reference_gauss_setup();
  const Cov2 cov = setup.total();
  const double mi = analytic_mi(cov);
  const double slope = cov[2] / cov[0];
  const double cond_var = cov[3] - cov[1] * cov[2] / cov[0];
  auto critic = [&](double x, double y) {
    const double r = y - slope * x;
    const double log_cond = -0.5 * std::log(2.0 * M_PI * cond_var) - r * r / (2.0 * cond_var);
    const double log_marg = -0.5 * std::log(2.0 * M_PI * cov[3]) - y * y / (2.0 * cov[3]);
    return 1.0 + log_cond - log_marg;
  };

  const int64_t k = 128, batches = 1000;  // 128k samples
  Rng rng(404);
  double sum = 0.0, sumsq = 0.0;
  for (int64_t b = 0; b < batches; ++b) {
    GaussBatch batch = sample_batch(setup, k, SampleMode::kIid, rng);
    Tensor scores({k, k});
    for (int64_t i = 0; i < k; ++i)
      for (int64_t j = 0; j < k; ++j)
        scores.data[static_cast<size_t>(i * k + j)] =
            critic(batch.xs[static_cast<size_t>(i)], batch.ys[static_cast<size_t>(j)]);
    const double est = nwj_value(scores);
    sum += est;
    sumsq += est * est;
  }
  const double n = static_cast<double>(batches);
  const double mean = sum / n;
  const double se = std::sqrt(std::max(0.0, sumsq / n - mean * mean) / n);
  INFO("mean " << mean << " vs MI " << mi << " (se " << se << ")");
  CHECK(std::fabs(mean - mi) < 3.0 * se);
}
