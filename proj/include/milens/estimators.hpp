#pragma once

#include <string>

#include "milens/tape.hpp"

namespace milens {

enum class EstimatorKind { kInfoNce, kNwj };

EstimatorKind estimator_from_string(const std::string& s);
std::string to_string(EstimatorKind kind);

// Batch-based mutual-information lower bounds and the multi-class contrastive
// loss, as differentiable tape expressions over a square score matrix
// S[i][j] = f(x_i, y_j).

// (1/K) sum_i [ S_ii - logsumexp_j S_ij + log K ].  Upper-bounded by log K.
NodeId infonce(Tape& tape, NodeId scores);

// mean_i S_ii - mean over the K(K-1) off-diagonal pairs of exp(S_ij - 1).
// The off-diagonal restriction keeps the second term a sample from the
// product of marginals. Requires K >= 2.
NodeId nwj(Tape& tape, NodeId scores);

// (1/K) sum_i log(1 + sum_{j != i} exp(S_ij - S_ii)), computed stably.
NodeId kpair_loss(Tape& tape, NodeId scores);

NodeId estimate(Tape& tape, EstimatorKind kind, NodeId scores);

// | estimate(S) - t |, with subgradient 0 at the kink.
NodeId target_loss(Tape& tape, EstimatorKind kind, NodeId scores, double t);

// Convenience for value-only evaluation.
double infonce_value(const Tensor& scores);
double nwj_value(const Tensor& scores);
double kpair_value(const Tensor& scores);
double estimate_value(EstimatorKind kind, const Tensor& scores);

}  // namespace milens
