#include "milens/adam.hpp"

#include <cmath>

#include "milens/error.hpp"

namespace milens {

Adam::Adam(std::vector<Param*> params, double beta1, double beta2, double epsilon)
    : params_(std::move(params)) {
  state_.beta1 = beta1;
  state_.beta2 = beta2;
  state_.epsilon = epsilon;
  state_.first_moment.reserve(params_.size());
  state_.second_moment.reserve(params_.size());
  for (Param* p : params_) {
    state_.first_moment.emplace_back(static_cast<size_t>(p->size()), 0.0);
    state_.second_moment.emplace_back(static_cast<size_t>(p->size()), 0.0);
  }
}

void Adam::step(double learning_rate) {
  if (learning_rate < 0.0) throw Error("adam: negative learning rate");
  state_.step_count += 1;
  const double t = static_cast<double>(state_.step_count);
  const double bc1 = 1.0 - std::pow(state_.beta1, t);
  const double bc2 = 1.0 - std::pow(state_.beta2, t);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param& p = *params_[pi];
    p.value.ensure_grad();
    auto& m = state_.first_moment[pi];
    auto& v = state_.second_moment[pi];
    const size_t n = p.value.data.size();
    for (size_t i = 0; i < n; ++i) {
      const double g = p.value.grad[i];
      if (!std::isfinite(g))
        throw NumericError("adam: non-finite gradient for parameter '" + p.name + "' at index " +
                           std::to_string(i));
      m[i] = state_.beta1 * m[i] + (1.0 - state_.beta1) * g;
      v[i] = state_.beta2 * v[i] + (1.0 - state_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value.data[i] -= learning_rate * mhat / (std::sqrt(vhat) + state_.epsilon);
    }
  }
}

}  // namespace milens
