#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "jacobi_svd.hpp"
#include "milens/critics.hpp"
#include "milens/error.hpp"
#include "op_check.hpp"

using namespace milens;
using namespace milens::testing;

TEST_CASE("inner product on identity rows gives the identity score matrix") {
  InnerProductCritic critic(2, 2);
  Tensor xs({2, 2}, {1, 0, 0, 1});
  Tape tape;
  NodeId s = critic.score_matrix(tape, tape.input(xs), tape.input(xs));
  auto v = tape.value(s);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 0.0);
  CHECK(v[3] == 1.0);
}

TEST_CASE("bilinear critic with identity weight reproduces the inner product") {
  Rng rng(11);
  ParamStore store;
  BilinearCritic bilinear(store, "critic", 5, 5, rng);
  auto& w = bilinear.weight();
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j) w.value.data[static_cast<size_t>(i * 5 + j)] = i == j ? 1.0 : 0.0;
  InnerProductCritic inner(5, 5);

  Tensor xs = random_tensor({7, 5}, rng);
  Tensor ys = random_tensor({7, 5}, rng);
  Tape t1, t2;
  auto v1 = t1.value(bilinear.score_matrix(t1, t1.input(xs), t1.input(ys)));
  auto v2 = t2.value(inner.score_matrix(t2, t2.input(xs), t2.input(ys)));
  for (size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);
}

TEST_CASE("concat critic with zero weights is the constant bias") {
  Rng rng(12);
  ParamStore store;
  ConcatMlpCritic critic(store, "critic", 3, 3, rng);
  for (auto& p : store)
    for (double& v : p.value.data) v = 0.0;
  store.find("critic/l1/b")->value.data[0] = 0.75;

  Tensor xs = random_tensor({4, 3}, rng);
  Tensor ys = random_tensor({4, 3}, rng);
  Tape tape;
  auto v = tape.value(critic.score_matrix(tape, tape.input(xs), tape.input(ys)));
  for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.75);
}

TEST_CASE("concat critic pairs rows as S[i][j] = f(x_i, y_j)") {
  // With f([x, y]) = sum(x) - sum(y) realized by fixed weights, the score
  // matrix must vary over rows by x_i and over columns by y_j.
  Rng rng(13);
  ParamStore store;
  ConcatMlpCritic critic(store, "critic", 2, 2, rng);
  for (auto& p : store)
    for (double& v : p.value.data) v = 0.0;
  // Hidden layer: unit 0 passes +sum(x), unit 1 passes +sum(y); output
  // combines them with weights +1 / -1 (inputs kept positive so ReLU is
  // transparent).
  Param& w1 = *store.find("critic/l0/W");
  CHECK(w1.value.shape[0] == 4);
  const auto hidden = static_cast<size_t>(w1.value.shape[1]);
  w1.value.data[0 * hidden + 0] = 1.0;  // x0 -> h0
  w1.value.data[1 * hidden + 0] = 1.0;  // x1 -> h0
  w1.value.data[2 * hidden + 1] = 1.0;  // y0 -> h1
  w1.value.data[3 * hidden + 1] = 1.0;  // y1 -> h1
  Param& w2 = *store.find("critic/l1/W");
  w2.value.data[0] = 1.0;
  w2.value.data[1] = -1.0;

  Tensor xs({3, 2}, {1, 0, 2, 0, 3, 0});
  Tensor ys({3, 2}, {0.5, 0, 1.5, 0, 2.5, 0});
  Tape tape;
  auto v = tape.value(critic.score_matrix(tape, tape.input(xs), tape.input(ys)));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j) {
      const double expected = (1.0 + static_cast<double>(i)) - (0.5 + static_cast<double>(j));
      CHECK(v[static_cast<size_t>(i * 3 + j)] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("separable critic embeddings bound the score-matrix rank") {
  Rng rng(14);
  ParamStore store;
  const int64_t embed = 6;
  SeparableCritic critic(store, "critic", 9, 9, rng, /*hidden=*/8, embed);
  const int64_t k = 12;
  Tensor xs = random_tensor({k, 9}, rng);
  Tensor ys = random_tensor({k, 9}, rng);
  Tape tape;
  auto v = tape.value(critic.score_matrix(tape, tape.input(xs), tape.input(ys)));
  const auto sigma =
      jacobi_singular_values(std::vector<double>(v.begin(), v.end()), k, k);
  for (size_t i = static_cast<size_t>(embed); i < sigma.size(); ++i) CHECK(sigma[i] < 1e-8);
  CHECK(sigma[0] > 1e-3);  // sanity: the matrix is not trivially zero
}

TEST_CASE("score matrices differentiate through inputs and parameters") {
  Rng rng(15);
  const int64_t k = 4, d = 3;

  struct Case {
    const char* name;
    CriticKind kind;
  };
  for (auto kind : {CriticKind::kInnerProduct, CriticKind::kBilinear, CriticKind::kSeparable,
                    CriticKind::kConcatMlp}) {
    ParamStore store;
    auto critic = make_critic(kind, store, "critic", d, d, rng);
    std::vector<Tensor> inputs = {random_tensor({k, d}, rng), random_tensor({k, d}, rng)};
    ExprBuilder build = [&](Tape& t, const std::vector<NodeId>& in) {
      return critic->score_matrix(t, in[0], in[1]);
    };
    for (size_t target = 0; target < 2; ++target) {
      const auto report = check_expr_gradient(build, inputs, target, rng);
      CAPTURE(to_string(kind));
      INFO(to_string(kind) << " input " << target << ": rel err " << report.max_rel_err);
      CHECK(report.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("dimension mismatches raise structured errors") {
  Rng rng(16);
  ParamStore store;
  BilinearCritic critic(store, "critic", 4, 4, rng);
  Tape tape;
  NodeId xs = tape.input(random_tensor({3, 4}, rng));
  NodeId bad_ys = tape.input(random_tensor({3, 5}, rng));
  CHECK_THROWS_AS(critic.score_matrix(tape, xs, bad_ys), ShapeError);
  CHECK_THROWS_AS(InnerProductCritic(3, 4), ShapeError);
}

TEST_CASE("critic parameter counts match the stated layer sizes") {
  Rng rng(17);
  ParamStore sep_store;
  SeparableCritic sep(sep_store, "c", 100, 100, rng);
  CHECK(sep_store.total_scalars() == 2 * (100 * 100 + 100 + 100 * 100 + 100));  // ~40k

  ParamStore cat_store;
  ConcatMlpCritic cat(cat_store, "c", 100, 100, rng);
  CHECK(cat_store.total_scalars() == 200 * 200 + 200 + 200 + 1);  // ~40k
}

TEST_CASE("critic kind parsing") {
  CHECK(critic_from_string("bilinear") == CriticKind::kBilinear);
  CHECK_THROWS_AS(critic_from_string("attention"), ConfigError);
}
