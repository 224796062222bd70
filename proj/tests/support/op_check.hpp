#pragma once

// Harness that runs the finite-difference oracle against the tape's backward
// pass for a single op (or composite expression). The expression output is
// projected to a scalar with a fixed random weighting so every output entry
// influences the loss.

#include <functional>
#include <string>
#include <vector>

#include "finite_diff.hpp"
#include "milens/tape.hpp"

namespace milens::testing {

using ExprBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

// Checks d(loss)/d(inputs[target]) where loss = sum(expr * fixed_random).
inline FdReport check_expr_gradient(const ExprBuilder& build, const std::vector<Tensor>& inputs,
                                    size_t target, Rng& rng, double h = 1e-5) {
  Tensor proj;
  {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const Tensor& t : inputs) ids.push_back(tape.input(t));
    NodeId out = build(tape, ids);
    proj = random_tensor(tape.shape(out), rng);
  }

  auto loss_at = [&](const std::vector<double>& x) {
    Tape tape;
    std::vector<NodeId> ids;
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (i == target)
        ids.push_back(tape.input(inputs[i].shape, x));
      else
        ids.push_back(tape.input(inputs[i]));
    }
    NodeId out = build(tape, ids);
    return tape.scalar(tape.sum(tape.mul(out, tape.input(proj))));
  };

  std::vector<double> analytic;
  {
    Tape tape;
    std::vector<NodeId> ids;
    for (size_t i = 0; i < inputs.size(); ++i) {
      if (i == target)
        ids.push_back(tape.input_grad(inputs[i]));
      else
        ids.push_back(tape.input(inputs[i]));
    }
    NodeId out = build(tape, ids);
    NodeId loss = tape.sum(tape.mul(out, tape.input(proj)));
    tape.backward(loss);
    auto g = tape.grad(ids[target]);
    analytic.assign(g.begin(), g.end());
  }

  return check_gradient(loss_at, inputs[target].data, analytic, h);
}

}  // namespace milens::testing
