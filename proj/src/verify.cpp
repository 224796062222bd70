#include "milens/verify.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "milens/adam.hpp"
#include "milens/critics.hpp"
#include "milens/encoders.hpp"
#include "milens/error.hpp"
#include "milens/estimators.hpp"
#include "milens/gaussian.hpp"
#include "milens/tape.hpp"

namespace milens {

namespace {

Tensor random_scores(int64_t k, Rng& rng, double scale = 3.0) {
  Tensor s({k, k});
  for (double& v : s.data) v = rng.uniform(-scale, scale);
  return s;
}

// Central-difference check of d(loss)/d(scores) for a scalar loss builder.
double fd_max_rel_err(const std::function<double(const Tensor&)>& f, const Tensor& at,
                      const std::vector<double>& analytic) {
  Tensor x = at;
  const double h = 1e-5;
  double worst = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double up = f(x);
    x.data[i] = keep - h;
    const double down = f(x);
    x.data[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic[i])});
    worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
  }
  return worst;
}

std::vector<double> grad_of(const std::function<NodeId(Tape&, NodeId)>& build, const Tensor& at) {
  Tape tape;
  NodeId x = tape.input_grad(at);
  tape.backward(build(tape, x));
  auto g = tape.grad(x);
  return {g.begin(), g.end()};
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

}  // namespace

std::vector<VerifyCheck> run_verify_suite() {
  std::vector<VerifyCheck> checks;
  auto add = [&](const std::string& name, const std::function<std::string()>& body) {
    VerifyCheck check;
    check.name = name;
    try {
      check.detail = body();
      check.passed = true;
    } catch (const std::exception& e) {
      check.detail = e.what();
      check.passed = false;
    }
    checks.push_back(std::move(check));
  };
  auto expect = [](bool ok, const std::string& detail) {
    if (!ok) throw Error("expectation failed: " + detail);
    return detail;
  };

  Rng rng(20240);

  add("infonce bounded by log K on random scores", [&] {
    double worst_margin = 1e300;
    for (int trial = 0; trial < 300; ++trial) {
      const int64_t k = 2 + static_cast<int64_t>(rng.uniform_int(63));
      const double value = infonce_value(random_scores(k, rng));
      worst_margin = std::min(worst_margin, std::log(static_cast<double>(k)) - value);
      if (value > std::log(static_cast<double>(k)) + 1e-9)
        throw Error("bound violated: " + num(value) + " > log " + std::to_string(k));
    }
    return "min margin to log K = " + num(worst_margin);
  });

  add("infonce + kpair identity equals log K", [&] {
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const int64_t k = 1 + static_cast<int64_t>(rng.uniform_int(16));
      Tensor s = random_scores(k, rng);
      worst = std::max(worst, std::fabs(infonce_value(s) + kpair_value(s) -
                                        std::log(static_cast<double>(k))));
    }
    return expect(worst < 1e-9, "max residual = " + num(worst));
  });

  add("infonce shift invariance", [&] {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor s = random_scores(8, rng);
      Tensor shifted = s;
      const double c = rng.uniform(-40, 40);
      for (double& v : shifted.data) v += c;
      worst = std::max(worst, std::fabs(infonce_value(shifted) - infonce_value(s)));
    }
    return expect(worst < 1e-9, "max drift = " + num(worst));
  });

  add("nwj on all-ones scores is exactly zero", [&] {
    const double value = nwj_value(Tensor({4, 4}, std::vector<double>(16, 1.0)));
    return expect(value == 0.0, "value = " + num(value));
  });

  add("nwj fixed-point values", [&] {
    const double a = nwj_value(Tensor({2, 2}, {2, 0, 0, 2}));
    const double b = nwj_value(Tensor({2, 2}, {0, 0, 0, 0}));
    return expect(std::fabs(a - 1.6321205588285577) < 1e-12 &&
                      std::fabs(b + 0.36787944117144233) < 1e-12,
                  "nwj(diag2) = " + num(a) + ", nwj(0) = " + num(b));
  });

  add("kpair zero matrix gives log 2", [&] {
    const double value = kpair_value(Tensor({2, 2}, {0, 0, 0, 0}));
    return expect(std::fabs(value - std::log(2.0)) < 1e-12, "value = " + num(value));
  });

  add("estimator rejects non-finite scores", [&] {
    Tensor bad({2, 2}, {0.0, std::nan(""), 0.0, 0.0});
    try {
      infonce_value(bad);
    } catch (const NumericError&) {
      return std::string("NumericError raised as specified");
    }
    throw Error("non-finite scores accepted");
  });

  add("nwj overflow guard reports the max score", [&] {
    Tensor huge({2, 2}, {0.0, 800.0, 0.0, 0.0});
    try {
      nwj_value(huge);
    } catch (const NumericError& e) {
      if (std::string(e.what()).find("800") == std::string::npos) throw;
      return std::string("guard fired: ") + e.what();
    }
    throw Error("overflow accepted");
  });

  add("infonce gradient matches finite differences", [&] {
    Tensor s = random_scores(5, rng, 1.5);
    const auto analytic = grad_of([](Tape& t, NodeId x) { return infonce(t, x); }, s);
    const double err =
        fd_max_rel_err([](const Tensor& m) { return infonce_value(m); }, s, analytic);
    return expect(err < 1e-4, "max rel err = " + num(err));
  });

  add("nwj gradient matches finite differences", [&] {
    Tensor s = random_scores(5, rng, 1.5);
    const auto analytic = grad_of([](Tape& t, NodeId x) { return nwj(t, x); }, s);
    const double err = fd_max_rel_err([](const Tensor& m) { return nwj_value(m); }, s, analytic);
    return expect(err < 1e-4, "max rel err = " + num(err));
  });

  add("kpair gradient matches finite differences", [&] {
    Tensor s = random_scores(5, rng, 1.5);
    const auto analytic = grad_of([](Tape& t, NodeId x) { return kpair_loss(t, x); }, s);
    const double err = fd_max_rel_err([](const Tensor& m) { return kpair_value(m); }, s, analytic);
    return expect(err < 1e-4, "max rel err = " + num(err));
  });

  add("matmul/relu/logsumexp gradient spot check", [&] {
    Tensor a({3, 4});
    for (double& v : a.data) v = rng.uniform(-1, 1);
    Tensor w({4, 5});
    for (double& v : w.data) v = rng.uniform(-1, 1);
    auto loss_value = [&](const Tensor& wt) {
      Tape t;
      NodeId h = t.relu(t.matmul(t.input(a), t.input(wt)));
      return t.scalar(t.mean(t.logsumexp_rows(h)));
    };
    std::vector<double> analytic;
    {
      Tape t;
      NodeId wn = t.input_grad(w);
      NodeId h = t.relu(t.matmul(t.input(a), wn));
      t.backward(t.mean(t.logsumexp_rows(h)));
      auto g = t.grad(wn);
      analytic.assign(g.begin(), g.end());
    }
    const double err = fd_max_rel_err(loss_value, w, analytic);
    return expect(err < 1e-4, "max rel err = " + num(err));
  });

  add("logsumexp survives huge inputs", [&] {
    Tape tape;
    const double v =
        tape.value(tape.logsumexp_rows(tape.input({1, 2}, std::vector<double>{1000.0, 1000.0})))[0];
    return expect(std::fabs(v - (1000.0 + std::log(2.0))) < 1e-12, "value = " + num(v));
  });

  add("bilinear critic with identity weight equals inner product", [&] {
    ParamStore store;
    Rng crng(7);
    BilinearCritic bilinear(store, "c", 6, 6, crng);
    auto& w = bilinear.weight();
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 6; ++j)
        w.value.data[static_cast<size_t>(i * 6 + j)] = i == j ? 1.0 : 0.0;
    InnerProductCritic inner(6, 6);
    Tensor xs({4, 6}), ys({4, 6});
    for (double& v : xs.data) v = crng.uniform(-1, 1);
    for (double& v : ys.data) v = crng.uniform(-1, 1);
    Tape t1, t2;
    auto v1 = t1.value(bilinear.score_matrix(t1, t1.input(xs), t1.input(ys)));
    auto v2 = t2.value(inner.score_matrix(t2, t2.input(xs), t2.input(ys)));
    for (size_t i = 0; i < v1.size(); ++i)
      if (v1[i] != v2[i]) throw Error("mismatch at " + std::to_string(i));
    return std::string("exact equality on a random batch");
  });

  add("skip-MLP initializes to the exact identity", [&] {
    ParamStore store;
    Rng erng(8);
    SkipMlpEncoder enc(store, "g", 12, erng);
    Tensor x({3, 12});
    for (double& v : x.data) v = erng.uniform(-1, 1);
    Tensor y = enc.apply(x);
    for (size_t i = 0; i < x.data.size(); ++i)
      if (x.data[i] != y.data[i]) throw Error("not identity at " + std::to_string(i));
    return std::string("identity on a random batch");
  });

  add("realnvp round-trip under random weights", [&] {
    ParamStore store;
    Rng erng(9);
    RealNvpEncoder enc(store, "g", 10, erng, 6, 16);
    for (auto& p : store)
      for (double& v : p.value.data) v = 0.3 * erng.normal();
    Tensor x({4, 10});
    for (double& v : x.data) v = erng.uniform(-1, 1);
    Tensor back = enc.decode(enc.apply(x));
    double err = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i)
      err = std::max(err, std::fabs(x.data[i] - back.data[i]));
    if (err >= 1e-9) throw Error("round-trip error " + num(err));
    return "max error = " + num(err);
  });

  add("realnvp zero-shift initialization is the identity", [&] {
    ParamStore store;
    Rng erng(10);
    RealNvpEncoder enc(store, "g", 8, erng, 4, 12);
    Tensor x({2, 8});
    for (double& v : x.data) v = erng.uniform(-1, 1);
    Tensor y = enc.apply(x);
    for (size_t i = 0; i < x.data.size(); ++i)
      if (x.data[i] != y.data[i]) throw Error("not identity at " + std::to_string(i));
    return std::string("identity at initialization");
  });

  add("analytic MI on the reference covariances", [&] {
    const double mi = analytic_mi(reference_gauss_setup().total());
    return expect(std::fabs(mi - 0.020410997260127406) < 1e-12, "mi = " + num(mi));
  });

  add("analytic MI of independent variables is zero", [&] {
    const double mi = analytic_mi({1.5, 0.0, 0.0, 0.7});
    return expect(mi == 0.0, "mi = " + num(mi));
  });

  add("analytic MI sign symmetry in the correlation", [&] {
    const double a = analytic_mi({1.0, 0.6, 0.6, 1.0});
    const double b = analytic_mi({1.0, -0.6, -0.6, 1.0});
    return expect(std::fabs(a - b) < 1e-15, num(a) + " vs " + num(b));
  });

  add("gaussian sampler is seed-deterministic", [&] {
    const GaussSetup setup = reference_gauss_setup();
    Rng a(55), b(55);
    const GaussBatch ba = sample_batch(setup, 16, SampleMode::kSharedZ, a);
    const GaussBatch bb = sample_batch(setup, 16, SampleMode::kSharedZ, b);
    if (ba.xs != bb.xs || ba.ys != bb.ys) throw Error("same seed produced different batches");
    return std::string("identical batches for identical seeds");
  });

  add("adam first-step magnitude with constant gradient", [&] {
    Param p("p", {1});
    p.value.data = {0.0};
    Adam adam({&p});
    p.value.ensure_grad();
    p.value.grad[0] = 1.0;
    adam.step(0.01);
    const double delta = -p.value.data[0];
    return expect(std::fabs(delta - 0.01 / (1.0 + 1e-8)) < 1e-14, "step = " + num(delta));
  });

  add("adam leaves parameters alone under zero gradients", [&] {
    Param p("p", {3});
    p.value.data = {1.0, 2.0, 3.0};
    Adam adam({&p});
    for (int i = 0; i < 3; ++i) {
      p.value.zero_grad();
      adam.step(0.1);
    }
    return expect(p.value.data == std::vector<double>({1.0, 2.0, 3.0}),
                  "parameters unchanged over 3 steps");
  });

  add("backward twice without a fresh forward errors", [&] {
    Param p("p", {2});
    p.value.data = {1.0, -1.0};
    Tape tape;
    NodeId loss = tape.sum(tape.param(p));
    tape.backward(loss);
    try {
      tape.backward(loss);
    } catch (const Error&) {
      return std::string("second backward rejected");
    }
    throw Error("second backward accepted");
  });

  add("shape errors name the op and shapes", [&] {
    Tape tape;
    NodeId a = tape.input({2, 3}, std::vector<double>(6, 0.0));
    NodeId b = tape.input({4, 4}, std::vector<double>(16, 0.0));
    try {
      tape.matmul(a, b);
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      if (msg.find("matmul") == std::string::npos || msg.find("[2,3]") == std::string::npos)
        throw Error("message lacks context: " + msg);
      return "message: " + msg;
    }
    throw Error("mismatched matmul accepted");
  });

  return checks;
}

}  // namespace milens
