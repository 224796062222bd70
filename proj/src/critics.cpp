#include "milens/critics.hpp"

#include "milens/error.hpp"

namespace milens {

CriticKind critic_from_string(const std::string& s) {
  if (s == "inner_product") return CriticKind::kInnerProduct;
  if (s == "bilinear") return CriticKind::kBilinear;
  if (s == "separable") return CriticKind::kSeparable;
  if (s == "concat_mlp") return CriticKind::kConcatMlp;
  throw ConfigError("critic.kind: unknown critic '" + s +
                    "' (expected inner_product|bilinear|separable|concat_mlp)");
}

std::string to_string(CriticKind kind) {
  switch (kind) {
    case CriticKind::kInnerProduct: return "inner_product";
    case CriticKind::kBilinear: return "bilinear";
    case CriticKind::kSeparable: return "separable";
    case CriticKind::kConcatMlp: return "concat_mlp";
  }
  return "?";
}

namespace {
void check_batch(const Tape& tape, NodeId xs, NodeId ys, int64_t d1, int64_t d2,
                 const char* who) {
  const Shape& sx = tape.shape(xs);
  const Shape& sy = tape.shape(ys);
  if (sx.size() != 2 || sy.size() != 2 || sx[0] != sy[0] || sx[0] < 1)
    throw ShapeError(std::string(who) + ": batches " + shape_str(sx) + " vs " + shape_str(sy));
  if (sx[1] != d1 || sy[1] != d2)
    throw ShapeError(std::string(who) + ": expected dims [K," + std::to_string(d1) + "] x [K," +
                     std::to_string(d2) + "], got " + shape_str(sx) + " x " + shape_str(sy));
}
}  // namespace

// ---- inner product ------------------------------------------------------------

InnerProductCritic::InnerProductCritic(int64_t d1, int64_t d2) {
  if (d1 != d2)
    throw ShapeError("inner_product critic: representation dims differ (" + std::to_string(d1) +
                     " vs " + std::to_string(d2) + ")");
}

NodeId InnerProductCritic::score_matrix(Tape& tape, NodeId xs, NodeId ys) const {
  const Shape& sx = tape.shape(xs);
  const Shape& sy = tape.shape(ys);
  if (sx.size() != 2 || sy.size() != 2 || sx[0] != sy[0] || sx[1] != sy[1])
    throw ShapeError("inner_product: batches " + shape_str(sx) + " vs " + shape_str(sy));
  return tape.matmul_nt(xs, ys);
}

// ---- bilinear -----------------------------------------------------------------

BilinearCritic::BilinearCritic(ParamStore& store, const std::string& prefix, int64_t d1,
                               int64_t d2, Rng& rng) {
  w_ = &store.create_dense_init(prefix + "/W", {d1, d2}, d1, d2, rng);
}

NodeId BilinearCritic::score_matrix(Tape& tape, NodeId xs, NodeId ys) const {
  check_batch(tape, xs, ys, w_->value.shape[0], w_->value.shape[1], "bilinear");
  return tape.matmul_nt(tape.matmul(xs, tape.param(*w_)), ys);
}

// ---- separable ----------------------------------------------------------------

SeparableCritic::SeparableCritic(ParamStore& store, const std::string& prefix, int64_t d1,
                                 int64_t d2, Rng& rng, int64_t hidden, int64_t embed) {
  w1a_ = &store.create_dense_init(prefix + "/phi1/l0/W", {d1, hidden}, d1, hidden, rng);
  b1a_ = &store.create(prefix + "/phi1/l0/b", {hidden});
  w2a_ = &store.create_dense_init(prefix + "/phi1/l1/W", {hidden, embed}, hidden, embed, rng);
  b2a_ = &store.create(prefix + "/phi1/l1/b", {embed});
  w1b_ = &store.create_dense_init(prefix + "/phi2/l0/W", {d2, hidden}, d2, hidden, rng);
  b1b_ = &store.create(prefix + "/phi2/l0/b", {hidden});
  w2b_ = &store.create_dense_init(prefix + "/phi2/l1/W", {hidden, embed}, hidden, embed, rng);
  b2b_ = &store.create(prefix + "/phi2/l1/b", {embed});
}

NodeId SeparableCritic::embed(Tape& tape, NodeId x, Param* w1, Param* b1, Param* w2,
                              Param* b2) const {
  NodeId h = tape.relu(tape.bias_add(tape.matmul(x, tape.param(*w1)), tape.param(*b1)));
  return tape.bias_add(tape.matmul(h, tape.param(*w2)), tape.param(*b2));
}

NodeId SeparableCritic::score_matrix(Tape& tape, NodeId xs, NodeId ys) const {
  check_batch(tape, xs, ys, w1a_->value.shape[0], w1b_->value.shape[0], "separable");
  NodeId ex = embed(tape, xs, w1a_, b1a_, w2a_, b2a_);
  NodeId ey = embed(tape, ys, w1b_, b1b_, w2b_, b2b_);
  return tape.matmul_nt(ex, ey);
}

// ---- concatenated MLP ----------------------------------------------------------

ConcatMlpCritic::ConcatMlpCritic(ParamStore& store, const std::string& prefix, int64_t d1,
                                 int64_t d2, Rng& rng, int64_t hidden)
    : d1_(d1), d2_(d2) {
  w1_ = &store.create_dense_init(prefix + "/l0/W", {d1 + d2, hidden}, d1 + d2, hidden, rng);
  b1_ = &store.create(prefix + "/l0/b", {hidden});
  w2_ = &store.create_dense_init(prefix + "/l1/W", {hidden, 1}, hidden, 1, rng);
  b2_ = &store.create(prefix + "/l1/b", {1});
}

NodeId ConcatMlpCritic::score_matrix(Tape& tape, NodeId xs, NodeId ys) const {
  check_batch(tape, xs, ys, d1_, d2_, "concat_mlp");
  const int64_t k = tape.shape(xs)[0];
  // Row (i*K + j) of the pair batch is [x_i, y_j]; reshaping the [K^2, 1]
  // output row-major yields S[i][j].
  NodeId pairs = tape.concat_cols(tape.repeat_rows(xs, k), tape.tile_rows(ys, k));
  NodeId h = tape.relu(tape.bias_add(tape.matmul(pairs, tape.param(*w1_)), tape.param(*b1_)));
  NodeId out = tape.bias_add(tape.matmul(h, tape.param(*w2_)), tape.param(*b2_));
  return tape.reshape(out, {k, k});
}

std::unique_ptr<Critic> make_critic(CriticKind kind, ParamStore& store, const std::string& prefix,
                                    int64_t d1, int64_t d2, Rng& rng) {
  switch (kind) {
    case CriticKind::kInnerProduct: return std::make_unique<InnerProductCritic>(d1, d2);
    case CriticKind::kBilinear: return std::make_unique<BilinearCritic>(store, prefix, d1, d2, rng);
    case CriticKind::kSeparable:
      return std::make_unique<SeparableCritic>(store, prefix, d1, d2, rng);
    case CriticKind::kConcatMlp:
      return std::make_unique<ConcatMlpCritic>(store, prefix, d1, d2, rng);
  }
  throw Error("make_critic: unreachable");
}

}  // namespace milens
