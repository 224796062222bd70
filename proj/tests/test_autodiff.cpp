#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "milens/adam.hpp"
#include "milens/error.hpp"
#include "milens/tape.hpp"
#include "op_check.hpp"

using namespace milens;
using namespace milens::testing;

namespace {

// Uniform away from zero so ReLU/abs kinks never sit within the FD step.
Tensor kink_safe_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (double& x : t.data) {
    const double mag = rng.uniform(0.05, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

constexpr double kFdTol = 1e-4;

}  // namespace

TEST_CASE("matmul with identity is a no-op") {
  Rng rng(7);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a = random_tensor({2, 2}, rng);
  Tape tape;
  NodeId out = tape.matmul(tape.input(eye), tape.input(a));
  auto v = tape.value(out);
  for (size_t i = 0; i < 4; ++i) CHECK(v[i] == a.data[i]);
}

TEST_CASE("relu clamps negatives") {
  Tape tape;
  NodeId out = tape.relu(tape.input({3}, std::vector<double>{-1.0, 0.0, 2.5}));
  auto v = tape.value(out);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 2.5);
}

TEST_CASE("layer_norm maps a constant row to zero before the affine rescale") {
  Tape tape;
  Tensor gamma({3}, {1, 1, 1});
  Tensor beta({3}, {0, 0, 0});
  NodeId out = tape.layer_norm(tape.input({1, 3}, std::vector<double>{2, 2, 2}),
                               tape.input(gamma), tape.input(beta));
  auto v = tape.value(out);
  for (size_t i = 0; i < 3; ++i) CHECK(v[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("logsumexp is overflow-safe") {
  Tape tape;
  NodeId out = tape.logsumexp_rows(tape.input({1, 2}, std::vector<double>{1000.0, 1000.0}));
  CHECK(tape.value(out)[0] == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("shape mismatches raise structured errors naming the op") {
  Tape tape;
  NodeId a = tape.input({2, 3}, std::vector<double>(6, 1.0));
  NodeId b = tape.input({4, 5}, std::vector<double>(20, 1.0));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), ShapeError);
  CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("non-finite forward outputs are detected") {
  Tape tape;
  NodeId big = tape.input({2}, std::vector<double>{800.0, 0.0});
  CHECK_THROWS_AS(tape.exp_op(big), NumericError);
  NodeId neg = tape.input({1}, std::vector<double>{-1.0});
  CHECK_THROWS_AS(tape.log_op(neg), NumericError);
}

TEST_CASE("backward twice without a new forward pass errors") {
  Tape tape;
  Param p("p", {2});
  p.value.data = {1.0, 2.0};
  NodeId loss = tape.sum(tape.param(p));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("parameters not reachable from the loss keep zero gradients") {
  Param used("used", {2});
  used.value.data = {1.0, 2.0};
  Param unused("unused", {2});
  unused.value.data = {3.0, 4.0};
  Tape tape;
  NodeId a = tape.param(used);
  tape.param(unused);
  tape.backward(tape.sum(a));
  CHECK(used.value.grad[0] == 1.0);
  CHECK(unused.value.grad[0] == 0.0);
  CHECK(unused.value.grad[1] == 0.0);
}

TEST_CASE("gradient of sum(W x) broadcasts x across rows of W") {
  Rng rng(3);
  Param w("W", {3, 2});
  for (double& v : w.value.data) v = rng.uniform(-1, 1);
  Tensor x = random_tensor({2, 1}, rng);
  Tape tape;
  NodeId loss = tape.sum(tape.matmul(tape.param(w), tape.input(x)));
  tape.backward(loss);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 2; ++c)
      CHECK(w.value.grad[static_cast<size_t>(r * 2 + c)] ==
            doctest::Approx(x.data[static_cast<size_t>(c)]).epsilon(1e-14));
}

TEST_CASE("every op matches central finite differences") {
  Rng rng(2024);
  struct Case {
    const char* name;
    std::vector<Tensor> inputs;
    ExprBuilder build;
  };
  std::vector<Case> cases;

  cases.push_back({"matmul",
                   {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.matmul(in[0], in[1]); }});
  cases.push_back({"matmul_nt",
                   {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.matmul_nt(in[0], in[1]);
                   }});
  cases.push_back({"add",
                   {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.add(in[0], in[1]); }});
  cases.push_back({"sub",
                   {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.sub(in[0], in[1]); }});
  cases.push_back({"mul",
                   {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.mul(in[0], in[1]); }});
  cases.push_back({"bias_add",
                   {random_tensor({3, 4}, rng), random_tensor({4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.bias_add(in[0], in[1]);
                   }});
  cases.push_back({"scale",
                   {random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.scale(in[0], -2.5); }});
  cases.push_back({"add_scalar",
                   {random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.add_scalar(in[0], 0.7);
                   }});
  cases.push_back({"relu",
                   {kink_safe_tensor({3, 5}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.relu(in[0]); }});
  cases.push_back({"exp",
                   {random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.exp_op(in[0]); }});
  cases.push_back({"log",
                   {random_tensor({2, 3}, rng, 0.2, 3.0)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.log_op(in[0]); }});
  cases.push_back({"abs",
                   {kink_safe_tensor({2, 4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.abs_op(in[0]); }});
  cases.push_back({"logsumexp_rows",
                   {random_tensor({3, 5}, rng, -3.0, 3.0)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.logsumexp_rows(in[0]);
                   }});
  cases.push_back({"sum",
                   {random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.sum(in[0]); }});
  cases.push_back({"mean",
                   {random_tensor({2, 3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.mean(in[0]); }});
  cases.push_back({"slice_cols",
                   {random_tensor({3, 6}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.slice_cols(in[0], 1, 4);
                   }});
  cases.push_back({"concat_cols",
                   {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.concat_cols(in[0], in[1]);
                   }});
  cases.push_back({"repeat_rows",
                   {random_tensor({3, 2}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.repeat_rows(in[0], 3);
                   }});
  cases.push_back({"tile_rows",
                   {random_tensor({3, 2}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.tile_rows(in[0], 3); }});
  cases.push_back({"take_diag",
                   {random_tensor({4, 4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.take_diag(in[0]); }});
  cases.push_back({"mean_offdiag_exp",
                   {random_tensor({4, 4}, rng, -2.0, 2.0)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.mean_offdiag_exp(in[0], -1.0);
                   }});
  cases.push_back({"contrast_rows",
                   {random_tensor({4, 4}, rng, -2.0, 2.0)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.contrast_rows(in[0]);
                   }});
  cases.push_back({"layer_norm/x",
                   {random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
                    random_tensor({6}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.layer_norm(in[0], in[1], in[2]);
                   }});
  cases.push_back({"layer_norm_nchw/x",
                   {random_tensor({2, 4, 3, 3}, rng), random_tensor({4}, rng, 0.5, 1.5),
                    random_tensor({4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.layer_norm_nchw(in[0], in[1], in[2]);
                   }});
  cases.push_back({"conv2d",
                   {random_tensor({2, 1, 7, 9}, rng), random_tensor({3, 1, 5, 5}, rng),
                    random_tensor({3}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.conv2d_same(in[0], in[1], in[2], 2);
                   }});
  cases.push_back({"avg_pool_hw",
                   {random_tensor({2, 3, 4, 5}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.avg_pool_hw(in[0]); }});
  cases.push_back({"reshape",
                   {random_tensor({3, 4}, rng)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     return t.reshape(in[0], {2, 6});
                   }});

  for (const auto& c : cases) {
    for (size_t target = 0; target < c.inputs.size(); ++target) {
      CAPTURE(c.name);
      CAPTURE(target);
      const auto report = check_expr_gradient(c.build, c.inputs, target, rng);
      INFO(c.name << " input " << target << ": rel err " << report.max_rel_err << " (analytic "
                  << report.analytic << ", numeric " << report.numeric << ")");
      CHECK(report.max_rel_err < kFdTol);
    }
  }
}

TEST_CASE("softmax cross-entropy matches finite differences") {
  Rng rng(10);
  Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
  Tensor targets({4, 5});
  for (int64_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (int64_t j = 0; j < 5; ++j) {
      targets.data[static_cast<size_t>(i * 5 + j)] = rng.uniform(0.01, 1.0);
      total += targets.data[static_cast<size_t>(i * 5 + j)];
    }
    for (int64_t j = 0; j < 5; ++j) targets.data[static_cast<size_t>(i * 5 + j)] /= total;
  }

  auto loss_at = [&](const std::vector<double>& x) {
    Tape tape;
    NodeId l = tape.input(logits.shape, x);
    return tape.scalar(tape.softmax_cross_entropy(l, targets));
  };
  std::vector<double> analytic;
  {
    Tape tape;
    NodeId l = tape.input_grad(logits);
    tape.backward(tape.softmax_cross_entropy(l, targets));
    auto g = tape.grad(l);
    analytic.assign(g.begin(), g.end());
  }
  const auto report = check_gradient(loss_at, logits.data, analytic);
  CHECK(report.max_rel_err < kFdTol);
}

TEST_CASE("ten random multilayer compositions pass the gradient oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> inputs = {random_tensor({4, 6}, rng), random_tensor({6, 5}, rng),
                                  random_tensor({5}, rng)};
    ExprBuilder build = [](Tape& t, const std::vector<NodeId>& in) {
      NodeId h = t.relu(t.bias_add(t.matmul(in[0], in[1]), in[2]));
      return t.logsumexp_rows(h);
    };
    for (size_t target = 0; target < inputs.size(); ++target) {
      const auto report = check_expr_gradient(build, inputs, target, rng);
      CAPTURE(trial);
      CHECK(report.max_rel_err < kFdTol);
    }
  }
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  Param p("p", {3});
  p.value.data = {1.0, -2.0, 0.5};
  const auto before = p.value.data;
  Adam adam({&p});
  for (int i = 0; i < 5; ++i) {
    p.value.zero_grad();
    adam.step(1e-3);
  }
  CHECK(p.value.data == before);
  CHECK(adam.step_count() == 5);
}

TEST_CASE("adam first step moves a constant-gradient scalar by about lr") {
  // With g = 1 at t = 1 the bias-corrected moments are both exactly 1, so the
  // update is lr / (1 + eps).
  Param p("theta", {1});
  p.value.data = {0.25};
  Adam adam({&p});
  p.value.ensure_grad();
  p.value.grad[0] = 1.0;
  const double lr = 0.01;
  adam.step(lr);
  const double expected = 0.25 - lr / (1.0 + 1e-8);
  CHECK(p.value.data[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("identical parameters receiving identical gradients stay identical") {
  Rng rng(5);
  Param a("a", {8});
  Param b("b", {8});
  for (size_t i = 0; i < 8; ++i) a.value.data[i] = b.value.data[i] = rng.uniform(-1, 1);
  Adam opt_a({&a});
  Adam opt_b({&b});
  for (int step = 0; step < 50; ++step) {
    a.value.ensure_grad();
    b.value.ensure_grad();
    for (size_t i = 0; i < 8; ++i) {
      const double g = rng.uniform(-1, 1);
      a.value.grad[i] = g;
      b.value.grad[i] = g;
    }
    opt_a.step(1e-2);
    opt_b.step(1e-2);
  }
  CHECK(a.value.data == b.value.data);
}

TEST_CASE("adam reports the parameter name on non-finite gradients") {
  Param p("encoder/l0/W", {2});
  Adam adam({&p});
  p.value.ensure_grad();
  p.value.grad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(adam.step(1e-3), doctest::Contains("encoder/l0/W"), NumericError);
}

TEST_CASE("training trajectories are bit-identical for identical seeds") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    Param& w = store.create_dense_init("w", {4, 4}, 4, 4, rng);
    Param& b = store.create("b", {4});
    Adam adam({&w, &b});
    std::vector<double> trace;
    for (int step = 0; step < 20; ++step) {
      Tensor x = random_tensor({3, 4}, rng);
      Tape tape;
      NodeId h = tape.bias_add(tape.matmul(tape.input(x), tape.param(w)), tape.param(b));
      NodeId loss = tape.mean(tape.mul(h, h));
      tape.backward(loss);
      adam.step(1e-2);
      trace.push_back(tape.scalar(loss));
    }
    for (double v : w.value.data) trace.push_back(v);
    return trace;
  };
  CHECK(run(123) == run(123));
  CHECK(run(123) != run(124));
}

TEST_CASE("tensor construction rejects mismatched data length") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>{1.0, 2.0}), ShapeError);
}
