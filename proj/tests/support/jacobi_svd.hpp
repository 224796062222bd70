#pragma once

// One-sided Jacobi SVD, used as an independent oracle for singular-value
// computations. Deliberately has no dependency on LAPACK.

#include <cmath>
#include <vector>

namespace milens::testing {

// Singular values of a row-major m x n matrix (m >= n not required; the
// matrix is transposed internally when m < n). Descending order.
inline std::vector<double> jacobi_singular_values(const std::vector<double>& a_in, int64_t m,
                                                  int64_t n) {
  // Work on B (m x n) with m >= n.
  std::vector<double> b;
  if (m < n) {
    b.resize(a_in.size());
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) b[static_cast<size_t>(j * m + i)] = a_in[static_cast<size_t>(i * n + j)];
    std::swap(m, n);
  } else {
    b = a_in;
  }
  auto at = [&](int64_t r, int64_t c) -> double& { return b[static_cast<size_t>(r * n + c)]; };

  const double eps = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < n - 1; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int64_t i = 0; i < m; ++i) {
          alpha += at(i, p) * at(i, p);
          beta += at(i, q) * at(i, q);
          gamma += at(i, p) * at(i, q);
        }
        off = std::max(off, std::fabs(gamma) / std::sqrt(alpha * beta + 1e-300));
        if (std::fabs(gamma) < eps * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int64_t i = 0; i < m; ++i) {
          const double bp = at(i, p);
          const double bq = at(i, q);
          at(i, p) = c * bp - s * bq;
          at(i, q) = s * bp + c * bq;
        }
      }
    }
    if (off < eps) break;
  }

  std::vector<double> sigma(static_cast<size_t>(n));
  for (int64_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (int64_t i = 0; i < m; ++i) norm += at(i, j) * at(i, j);
    sigma[static_cast<size_t>(j)] = std::sqrt(norm);
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<double>());
  return sigma;
}

}  // namespace milens::testing
