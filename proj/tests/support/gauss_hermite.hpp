#pragma once

// Gauss-Hermite quadrature oracle for expectations under 2-D Gaussians.
// Nodes and weights computed from scratch (Newton iteration on the
// physicists' Hermite polynomials), independent of the library under test.

#include <array>
#include <cmath>
#include <vector>

namespace milens::testing {

struct GhRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline GhRule gauss_hermite_rule(int n) {
  GhRule rule;
  rule.nodes.resize(static_cast<size_t>(n));
  rule.weights.resize(static_cast<size_t>(n));
  const double pim4 = 0.7511255444649425;  // pi^{-1/4}
  double z = 0.0;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    if (i == 0)
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    else if (i == 1)
      z -= 1.14 * std::pow(n, 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * rule.nodes[0];
    else if (i == 3)
      z = 1.91 * z - 0.91 * rule.nodes[1];
    else
      z = 2.0 * z - rule.nodes[static_cast<size_t>(i - 2)];
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(double(j) / (j + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double dz = p1 / pp;
      z -= dz;
      if (std::fabs(dz) < 1e-15) break;
    }
    rule.nodes[static_cast<size_t>(i)] = z;
    rule.nodes[static_cast<size_t>(n - 1 - i)] = -z;
    rule.weights[static_cast<size_t>(i)] = 2.0 / (pp * pp);
    rule.weights[static_cast<size_t>(n - 1 - i)] = rule.weights[static_cast<size_t>(i)];
  }
  return rule;
}

// E_{N(0, cov)}[f(x, y)] for a 2x2 covariance, via the Cholesky change of
// variables and a tensorized Gauss-Hermite rule.
template <typename F>
double gaussian_expectation_2d(const std::array<double, 4>& cov, F&& f, int n = 40) {
  const GhRule rule = gauss_hermite_rule(n);
  const double l00 = std::sqrt(cov[0]);
  const double l10 = cov[2] / l00;
  const double l11 = std::sqrt(cov[3] - l10 * l10);
  const double inv_pi = 0.31830988618379067;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = std::sqrt(2.0) * rule.nodes[static_cast<size_t>(i)];
    for (int j = 0; j < n; ++j) {
      const double v = std::sqrt(2.0) * rule.nodes[static_cast<size_t>(j)];
      const double x = l00 * u;
      const double y = l10 * u + l11 * v;
      total += rule.weights[static_cast<size_t>(i)] * rule.weights[static_cast<size_t>(j)] *
               f(x, y);
    }
  }
  return total * inv_pi;
}

// Mutual information of a correlated 2-D Gaussian by direct quadrature of the
// KL integrand E_p(x,y)[log p(x,y) - log p(x) - log p(y)].
inline double quadrature_mi(const std::array<double, 4>& cov) {
  const double det = cov[0] * cov[3] - cov[1] * cov[2];
  auto log_joint = [&](double x, double y) {
    const double quad =
        (cov[3] * x * x - (cov[1] + cov[2]) * x * y + cov[0] * y * y) / det;
    return -std::log(2.0 * M_PI) - 0.5 * std::log(det) - 0.5 * quad;
  };
  auto log_marginal = [](double t, double var) {
    return -0.5 * std::log(2.0 * M_PI * var) - t * t / (2.0 * var);
  };
  return gaussian_expectation_2d(cov, [&](double x, double y) {
    return log_joint(x, y) - log_marginal(x, cov[0]) - log_marginal(y, cov[3]);
  });
}

}  // namespace milens::testing
