#pragma once

#include <cstdint>
#include <vector>

#include "milens/tensor.hpp"

namespace milens {

struct AdamState {
  int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> first_moment;   // one entry per parameter
  std::vector<std::vector<double>> second_moment;
};

// Adam with bias correction over a fixed set of parameters. The parameter
// list is pinned at construction so moment arrays stay aligned.
class Adam {
 public:
  explicit Adam(std::vector<Param*> params, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  // One update from the gradients currently stored on the parameters.
  // Throws NumericError naming the parameter on a non-finite gradient.
  void step(double learning_rate);

  const AdamState& state() const { return state_; }
  int64_t step_count() const { return state_.step_count; }

 private:
  std::vector<Param*> params_;
  AdamState state_;
};

}  // namespace milens
