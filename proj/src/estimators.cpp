#include "milens/estimators.hpp"

#include <cmath>
#include <limits>

#include "milens/error.hpp"

namespace milens {

namespace {

int64_t check_scores(Tape& tape, NodeId scores, const char* who, int64_t min_k) {
  const Shape& s = tape.shape(scores);
  if (s.size() != 2 || s[0] != s[1])
    throw ShapeError(std::string(who) + ": score matrix must be square, got " + shape_str(s));
  const int64_t k = s[0];
  if (k < min_k)
    throw ShapeError(std::string(who) + ": needs K >= " + std::to_string(min_k) + ", got K = " +
                     std::to_string(k));
  auto v = tape.value(scores);
  for (size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string(who) + ": non-finite score " + std::to_string(v[i]) +
                         " at entry (" + std::to_string(i / static_cast<size_t>(k)) + "," +
                         std::to_string(i % static_cast<size_t>(k)) + ")");
  return k;
}

// exp(x - 1) overflows f64 above this.
constexpr double kMaxNwjScore = 709.0;

}  // namespace

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "infonce") return EstimatorKind::kInfoNce;
  if (s == "nwj") return EstimatorKind::kNwj;
  throw ConfigError("estimator.kind: unknown estimator '" + s + "' (expected infonce|nwj)");
}

std::string to_string(EstimatorKind kind) {
  return kind == EstimatorKind::kInfoNce ? "infonce" : "nwj";
}

NodeId infonce(Tape& tape, NodeId scores) {
  const int64_t k = check_scores(tape, scores, "infonce", 1);
  NodeId diag = tape.take_diag(scores);
  NodeId lse = tape.logsumexp_rows(scores);
  NodeId ratio = tape.sub(diag, lse);
  return tape.add_scalar(tape.mean(ratio), std::log(static_cast<double>(k)));
}

NodeId nwj(Tape& tape, NodeId scores) {
  const int64_t k = check_scores(tape, scores, "nwj", 2);
  auto v = tape.value(scores);
  double max_off = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j)
      if (i != j) max_off = std::max(max_off, v[static_cast<size_t>(i * k + j)]);
  if (max_off > kMaxNwjScore)
    throw NumericError("nwj: exp overflow, max off-diagonal score = " + std::to_string(max_off));
  NodeId joint = tape.mean(tape.take_diag(scores));
  NodeId marginal = tape.mean_offdiag_exp(scores, -1.0);
  return tape.sub(joint, marginal);
}

NodeId kpair_loss(Tape& tape, NodeId scores) {
  check_scores(tape, scores, "kpair_loss", 1);
  return tape.mean(tape.contrast_rows(scores));
}

NodeId estimate(Tape& tape, EstimatorKind kind, NodeId scores) {
  return kind == EstimatorKind::kInfoNce ? infonce(tape, scores) : nwj(tape, scores);
}

NodeId target_loss(Tape& tape, EstimatorKind kind, NodeId scores, double t) {
  if (t < 0.0) throw ConfigError("target_loss: target must be >= 0, got " + std::to_string(t));
  return tape.abs_op(tape.add_scalar(estimate(tape, kind, scores), -t));
}

double infonce_value(const Tensor& scores) {
  Tape tape;
  return tape.scalar(infonce(tape, tape.input(scores)));
}

double nwj_value(const Tensor& scores) {
  Tape tape;
  return tape.scalar(nwj(tape, tape.input(scores)));
}

double kpair_value(const Tensor& scores) {
  Tape tape;
  return tape.scalar(kpair_loss(tape, tape.input(scores)));
}

double estimate_value(EstimatorKind kind, const Tensor& scores) {
  return kind == EstimatorKind::kInfoNce ? infonce_value(scores) : nwj_value(scores);
}

}  // namespace milens
