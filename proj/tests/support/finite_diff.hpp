#pragma once

// Central finite-difference gradient checking, independent of the tape's
// backward pass. Used as the oracle for every differentiable operation.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "milens/rng.hpp"
#include "milens/tensor.hpp"

namespace milens::testing {

struct FdReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// f maps a flat parameter vector to a scalar. Compares grad against central
// differences with step h. Relative error uses max(1, |a|, |n|) in the
// denominator so tiny gradients are compared absolutely.
inline FdReport check_gradient(const std::function<double(const std::vector<double>&)>& f,
                               std::vector<double> x, const std::vector<double>& analytic_grad,
                               double h = 1e-5) {
  FdReport report;
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = analytic_grad[i];
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    const double rel = std::fabs(analytic - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = static_cast<int64_t>(i);
      report.analytic = analytic;
      report.numeric = numeric;
    }
  }
  return report;
}

inline std::vector<double> random_vector(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace milens::testing
