#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "oescn/adam.hpp"
#include "oescn/checkpoint.hpp"
#include "oescn/tape.hpp"
#include "oracles.hpp"

using namespace oescn;

namespace {

Grid random_grid(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                 double hi = 1.0) {
  Grid g(std::move(shape));
  for (double& v : g.values) v = rng.uniform(lo, hi);
  return g;
}

// Loss = sum(op_output .* random_weights); checks d loss / d input for the
// op recorded by `record`.
void check_input_gradient(
    const std::function<Tape::Var(Tape&, Tape::Var)>& record,
    const std::vector<std::size_t>& in_shape, std::uint64_t seed,
    double tol = 1e-4) {
  Rng rng(seed);
  Grid x = random_grid(in_shape, rng);
  Grid weights;  // fixed after first forward
  auto eval = [&]() {
    Tape t;
    const Tape::Var xv = t.leaf(x, true);
    const Tape::Var y = record(t, xv);
    if (weights.shape.empty()) {
      Rng wrng(seed ^ 0xabcdef);
      weights = random_grid(t.value(y).shape, wrng);
    }
    const Tape::Var loss = t.sum(t.cmul(y, weights));
    return t.value(loss)[0];
  };
  eval();  // fix weights

  Tape t;
  const Tape::Var xv = t.leaf(x, true);
  const Tape::Var loss = t.sum(t.cmul(record(t, xv), weights));
  t.backward(loss);
  Grid analytic = t.grad(xv);

  const oracle::FdOutcome fd =
      oracle::finite_difference_check(eval, x, analytic, 1e-4, tol);
  CHECK_MESSAGE(fd.ok, "max fd error ", fd.max_err);
}

}  // namespace

TEST_CASE("conv2d identity and counting kernels") {
  Rng rng(1);
  Grid x = random_grid({1, 1, 4, 5}, rng);

  Tape t;
  const Tape::Var xv = t.leaf(x, false);
  Grid k({1, 1, 1, 1});
  k[0] = 1.0;
  const Tape::Var y =
      t.conv2d(xv, t.leaf(k, false), t.leaf(Grid({1}), false), Padding::same);
  CHECK(t.value(y).values == x.values);

  // All-ones 3x3 on constant input: interior 9c, corners 4c.
  Grid c_in({1, 1, 5, 6}, 2.0);
  Grid ones({1, 1, 3, 3}, 1.0);
  Tape t2;
  const Tape::Var cv = t2.leaf(c_in, false);
  const Tape::Var y2 = t2.conv2d(cv, t2.leaf(ones, false),
                                 t2.leaf(Grid({1}), false), Padding::same);
  const Grid& out = t2.value(y2);
  CHECK(out.values[0] == doctest::Approx(4 * 2.0));          // corner
  CHECK(out.values[1 * 6 + 1] == doctest::Approx(9 * 2.0));  // interior
  CHECK(out.values[5] == doctest::Approx(4 * 2.0));          // corner
}

TEST_CASE("conv2d valid padding and shape errors") {
  Rng rng(2);
  Grid x = random_grid({1, 1, 4, 4}, rng);
  Tape t;
  const Tape::Var xv = t.leaf(x, false);
  Grid k = random_grid({2, 1, 3, 3}, rng);
  const Tape::Var y = t.conv2d(xv, t.leaf(k, false),
                               t.leaf(Grid({2}), false), Padding::valid);
  CHECK(t.value(y).shape == std::vector<std::size_t>{1, 2, 2, 2});

  Grid big = random_grid({1, 1, 5, 5}, rng);
  CHECK_THROWS_AS(t.conv2d(xv, t.leaf(big, false), t.leaf(Grid({1}), false),
                           Padding::valid),
                  InvalidArgument);
  Grid mism = random_grid({1, 2, 3, 3}, rng);
  CHECK_THROWS_AS(t.conv2d(xv, t.leaf(mism, false), t.leaf(Grid({1}), false),
                           Padding::same),
                  InvalidArgument);
}

TEST_CASE("conv2d gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(10 + seed);
    Grid x = random_grid({1, 2, 5, 5}, rng);
    Grid k = random_grid({2, 2, 3, 3}, rng);
    Grid b = random_grid({2}, rng);

    Grid weights;
    auto eval = [&]() {
      Tape t;
      const Tape::Var y =
          t.conv2d(t.leaf(x, true), t.leaf(k, true), t.leaf(b, true),
                   Padding::same);
      if (weights.shape.empty()) {
        Rng wrng(seed ^ 0x77);
        weights = random_grid(t.value(y).shape, wrng);
      }
      return t.value(t.sum(t.cmul(y, weights)))[0];
    };
    eval();

    Tape t;
    const Tape::Var xv = t.leaf(x, true);
    const Tape::Var kv = t.leaf(k, true);
    const Tape::Var bv = t.leaf(b, true);
    const Tape::Var loss =
        t.sum(t.cmul(t.conv2d(xv, kv, bv, Padding::same), weights));
    t.backward(loss);

    Grid gx = t.grad(xv), gk = t.grad(kv), gb = t.grad(bv);
    CHECK(oracle::finite_difference_check(eval, x, gx).ok);
    CHECK(oracle::finite_difference_check(eval, k, gk).ok);
    CHECK(oracle::finite_difference_check(eval, b, gb).ok);
  }
}

TEST_CASE("elu values and asymptote") {
  Tape t;
  Grid x({5});
  x.values = {0.0, 1.0, -50.0, -1.0, 3.0};
  const Grid& y = t.value(t.elu(t.leaf(x, false)));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 1.0);
  CHECK(std::abs(y[2] + 1.0) < 1e-12);
  CHECK(y[3] == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK(y[4] == 3.0);
}

TEST_CASE("avg_pool2d arithmetic and floor semantics") {
  Tape t;
  Grid x({1, 1, 2, 2});
  x.values = {1.0, 2.0, 3.0, 4.0};
  const Grid& y = t.value(t.avg_pool2d(t.leaf(x, false), 2, 2, 2, 2));
  REQUIRE(y.numel() == 1);
  CHECK(y[0] == doctest::Approx(2.5));

  Grid c({2, 3, 6, 7}, 1.25);
  Tape t2;
  const Grid& yc = t2.value(t2.avg_pool2d(t2.leaf(c, false), 2, 2, 2, 2));
  CHECK(yc.shape == std::vector<std::size_t>{2, 3, 3, 3});
  for (double v : yc.values) CHECK(v == doctest::Approx(1.25));

  Grid wide({1, 1, 30, 299});
  Tape t3;
  const Grid& yw = t3.value(t3.avg_pool2d(t3.leaf(wide, false), 2, 2, 2, 2));
  CHECK(yw.shape == std::vector<std::size_t>{1, 1, 15, 149});

  Tape t4;
  Grid tiny({1, 1, 1, 4});
  CHECK_THROWS_AS(t4.avg_pool2d(t4.leaf(tiny, false), 2, 2, 2, 2),
                  InvalidArgument);
}

TEST_CASE("batch_norm normalizes per channel in train mode") {
  Rng rng(20);
  Grid x = random_grid({6, 3, 4, 5}, rng, -3.0, 7.0);
  Grid gain({3}, 1.0), shift({3}, 0.0);
  Grid rm({3}, 0.0), rv({3}, 1.0);
  Tape t;
  const Tape::Var y = t.batch_norm(t.leaf(x, false), t.leaf(gain, false),
                                   t.leaf(shift, false), rm, rv,
                                   RunMode::train);
  const Grid& out = t.value(y);
  const std::size_t spatial = 4 * 5;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t s = 0; s < spatial; ++s)
        mean += out.values[(b * 3 + ch) * spatial + s];
    mean /= 6 * spatial;
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = out.values[(b * 3 + ch) * spatial + s] - mean;
        var += d * d;
      }
    var /= 6 * spatial;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
  // Running statistics moved toward the batch statistics.
  CHECK(rm.values != std::vector<double>(3, 0.0));

  Tape t2;
  Grid one_row = random_grid({1, 3, 4, 5}, rng);
  Grid rm2({3}, 0.0), rv2({3}, 1.0);
  CHECK_THROWS_AS(
      t2.batch_norm(t2.leaf(one_row, false), t2.leaf(gain, false),
                    t2.leaf(shift, false), rm2, rv2, RunMode::train),
      InvalidArgument);
}

TEST_CASE("batch_norm eval with unit running stats is the identity") {
  Rng rng(21);
  Grid x = random_grid({3, 2, 2, 2}, rng);
  Grid gain({2}, 1.0), shift({2}, 0.0);
  Grid rm({2}, 0.0), rv({2}, 1.0);
  Tape t;
  const Tape::Var y =
      t.batch_norm(t.leaf(x, false), t.leaf(gain, false),
                   t.leaf(shift, false), rm, rv, RunMode::eval);
  const Grid& out = t.value(y);
  // Identity up to the epsilon guard inside 1/sqrt(var + eps).
  for (std::size_t i = 0; i < x.numel(); ++i)
    CHECK(out[i] == doctest::Approx(x[i]).epsilon(2e-5));
  // Eval mode must not touch the running statistics.
  CHECK(rm.values == std::vector<double>(2, 0.0));
  CHECK(rv.values == std::vector<double>(2, 1.0));
}

TEST_CASE("batch_norm gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(30 + seed);
    Grid x = random_grid({4, 2, 3, 3}, rng);
    Grid gain = random_grid({2}, rng, 0.5, 1.5);
    Grid shift = random_grid({2}, rng, -0.5, 0.5);

    Grid weights;
    auto eval = [&]() {
      Grid rm({2}, 0.0), rv({2}, 1.0);  // fresh; train stats are batch-local
      Tape t;
      const Tape::Var y =
          t.batch_norm(t.leaf(x, true), t.leaf(gain, true),
                       t.leaf(shift, true), rm, rv, RunMode::train);
      if (weights.shape.empty()) {
        Rng wrng(seed ^ 0x99);
        weights = random_grid(t.value(y).shape, wrng);
      }
      return t.value(t.sum(t.cmul(y, weights)))[0];
    };
    eval();

    Grid rm({2}, 0.0), rv({2}, 1.0);
    Tape t;
    const Tape::Var xv = t.leaf(x, true);
    const Tape::Var gv = t.leaf(gain, true);
    const Tape::Var sv = t.leaf(shift, true);
    const Tape::Var loss = t.sum(t.cmul(
        t.batch_norm(xv, gv, sv, rm, rv, RunMode::train), weights));
    t.backward(loss);
    Grid gx = t.grad(xv), gg = t.grad(gv), gs = t.grad(sv);

    CHECK(oracle::finite_difference_check(eval, x, gx).ok);
    CHECK(oracle::finite_difference_check(eval, gain, gg).ok);
    CHECK(oracle::finite_difference_check(eval, shift, gs).ok);
  }
}

TEST_CASE("dropout identity, rate, and unbiasedness") {
  Rng rng(40);
  Grid x = random_grid({100, 100}, rng, 0.5, 1.5);

  // Eval mode and p = 0 are exact identities.
  {
    Tape t;
    Rng drng(1);
    const Tape::Var xv = t.leaf(x, false);
    const Tape::Var y = t.dropout(xv, 0.25, RunMode::eval, drng);
    CHECK(y.id == xv.id);
    const Tape::Var z = t.dropout(xv, 0.0, RunMode::train, drng);
    CHECK(z.id == xv.id);
    CHECK_THROWS_AS(t.dropout(xv, 1.0, RunMode::train, drng), InvalidArgument);
  }

  // Empirical drop fraction over 10^6 elements.
  Grid big({1000, 1000}, 1.0);
  Tape t;
  Rng drng(7);
  const Grid& y = t.value(t.dropout(t.leaf(big, false), 0.25, RunMode::train,
                                    drng));
  std::size_t dropped = 0;
  double sum = 0.0;
  for (double v : y.values) {
    if (v == 0.0) ++dropped;
    sum += v;
  }
  const double frac = static_cast<double>(dropped) / y.numel();
  CHECK(std::abs(frac - 0.25) < 0.005);
  // Survivors are scaled so the expectation matches eval mode within 1%.
  CHECK(std::abs(sum / static_cast<double>(y.numel()) - 1.0) < 0.01);
}

TEST_CASE("softmax_cross_entropy anchors and gradient") {
  Tape t;
  Grid uniform({2, 13}, 0.0);
  const Tape::Var loss =
      t.cross_entropy_logits(t.leaf(uniform, false), {0, 5});
  CHECK(std::abs(t.value(loss)[0] - std::log(13.0)) < 1e-10);

  Tape t2;
  Grid sat({1, 4}, 0.0);
  sat.values[2] = 50.0;
  CHECK(t2.value(t2.cross_entropy_logits(t2.leaf(sat, false), {2}))[0] <
        1e-6);

  Tape t3;
  CHECK_THROWS_AS(t3.cross_entropy_logits(t3.leaf(uniform, false), {0, 13}),
                  InvalidArgument);

  // Gradient (probs - onehot)/b against finite differences.
  Rng rng(50);
  Grid logits = random_grid({3, 5}, rng, -2.0, 2.0);
  const std::vector<int> targets{1, 4, 0};
  auto eval = [&]() {
    Tape tt;
    return tt.value(tt.cross_entropy_logits(tt.leaf(logits, true), targets))[0];
  };
  Tape t4;
  const Tape::Var lv = t4.leaf(logits, true);
  t4.backward(t4.cross_entropy_logits(lv, targets));
  Grid analytic = t4.grad(lv);
  CHECK(oracle::finite_difference_check(eval, logits, analytic, 1e-4, 1e-5).ok);
}

TEST_CASE("softmax rows sum to one under extreme logits") {
  Rng rng(60);
  Grid logits = random_grid({6, 9}, rng, -1e4, 1e4);
  Tape t;
  const Grid& p = t.value(t.softmax_rows(t.leaf(logits, false)));
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 9; ++c) sum += p.at(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("input gradients of the remaining ops") {
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.elu(x); }, {3, 4}, 100);
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.avg_pool2d(x, 2, 2, 2, 2); },
      {2, 2, 4, 6}, 101);
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.softmax_cols(x); }, {4, 4}, 102);
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.softmax_rows(x); }, {4, 4}, 103);
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.transpose(x); }, {3, 5}, 104);
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.flatten(x); }, {2, 2, 3, 3}, 105);
  check_input_gradient(
      [](Tape& t, Tape::Var x) { return t.scale(x, -1.7); }, {3, 3}, 106);
  check_input_gradient(
      [](Tape& t, Tape::Var x) {
        return t.concat_cols({t.slice_cols(x, 0, 2), t.slice_cols(x, 2, 3)});
      },
      {3, 5}, 107);
  check_input_gradient(
      [](Tape& t, Tape::Var x) {
        Rng rng(9);
        Grid w({5, 4});
        for (double& v : w.values) v = rng.uniform(-1.0, 1.0);
        Grid b({4});
        for (double& v : b.values) v = rng.uniform(-1.0, 1.0);
        return t.dense(x, t.leaf(w, false), t.leaf(b, false));
      },
      {3, 5}, 108);
  check_input_gradient(
      [](Tape& t, Tape::Var x) {
        Rng rng(11);
        Grid w({4, 4});
        for (double& v : w.values) v = rng.uniform(-1.0, 1.0);
        return t.matmul(x, t.leaf(w, false));
      },
      {3, 4}, 109);
  check_input_gradient(
      [](Tape& t, Tape::Var x) {
        const Tape::Var wm = t.leaf(Grid::scalar(0.8), false);
        const Tape::Var wa = t.leaf(Grid::scalar(0.3), false);
        const Tape::Var bb = t.leaf(Grid::scalar(0.1), false);
        Rng rng(13);
        Grid other({3, 4});
        for (double& v : other.values) v = rng.uniform(-1.0, 1.0);
        return t.fuse_heads(x, t.leaf(other, false), wm, wa, bb);
      },
      {3, 4}, 110);
}

TEST_CASE("dropout gradient with a replayed mask") {
  Rng rng(70);
  Grid x = random_grid({4, 6}, rng);
  const std::uint64_t mask_seed = 1234;
  Grid weights;
  auto eval = [&]() {
    Tape t;
    Rng drng(mask_seed);  // identical mask each evaluation
    const Tape::Var y = t.dropout(t.leaf(x, true), 0.25, RunMode::train, drng);
    if (weights.shape.empty()) {
      Rng wrng(71);
      weights = random_grid(t.value(y).shape, wrng);
    }
    return t.value(t.sum(t.cmul(y, weights)))[0];
  };
  eval();
  Tape t;
  Rng drng(mask_seed);
  const Tape::Var xv = t.leaf(x, true);
  t.backward(t.sum(t.cmul(t.dropout(xv, 0.25, RunMode::train, drng), weights)));
  Grid analytic = t.grad(xv);
  CHECK(oracle::finite_difference_check(eval, x, analytic).ok);
}

TEST_CASE("backward bookkeeping") {
  // Loss equal to the sum of parameters has an all-ones gradient.
  Tape t;
  Grid p({3, 3}, 2.0);
  const Tape::Var pv = t.leaf(p, true);
  t.backward(t.sum(pv));
  for (double g : t.grad(pv).values) CHECK(g == 1.0);

  // Zero upstream gradient propagates zeros.
  Tape t2;
  const Tape::Var pv2 = t2.leaf(p, true);
  const Tape::Var loss2 = t2.scale(t2.sum(pv2), 0.0);
  t2.backward(loss2);
  for (double g : t2.grad(pv2).values) CHECK(g == 0.0);

  // Backward without any forward is a state error; so is a second backward.
  Tape t3;
  CHECK_THROWS_AS(t3.backward(Tape::Var{}), StateError);
  Tape t4;
  const Tape::Var x = t4.leaf(Grid::scalar(1.0), true);
  t4.backward(t4.scale(x, 2.0));
  CHECK_THROWS_AS(t4.backward(x), StateError);
}

TEST_CASE("adam trivial steps") {
  AdamConfig cfg;
  cfg.lr = 0.001;

  Grid theta({3}, 1.0);
  Grid g({3}, 0.0);
  Grid m({3}), v({3});
  adam_update(theta, g, m, v, 1, cfg);
  CHECK(theta.values == std::vector<double>(3, 1.0));

  // A scalar gradient at t=1 moves by almost exactly lr.
  Grid th({1}, 0.5);
  Grid gg({1});
  gg[0] = 0.3;
  Grid m2({1}), v2({1});
  adam_update(th, gg, m2, v2, 1, cfg);
  CHECK(std::abs(std::abs(th[0] - 0.5) - cfg.lr) < 1e-6 * cfg.lr);

  Grid bad({1});
  bad[0] = std::numeric_limits<double>::infinity();
  Grid m3({1}), v3({1});
  Grid th3({1}, 0.0);
  CHECK_THROWS_AS(adam_update(th3, bad, m3, v3, 1, cfg), NumericError);
}

TEST_CASE("adam matches an independent reference over ten steps") {
  AdamConfig cfg;
  cfg.lr = 0.01;
  std::vector<double> start{1.0, -2.0, 0.5, 3.0};
  const std::vector<double> target{0.2, 0.4, -0.6, 1.0};
  auto grad_fn = [&](const std::vector<double>& th) {
    std::vector<double> g(th.size());
    for (std::size_t i = 0; i < th.size(); ++i) g[i] = th[i] - target[i];
    return g;
  };
  const auto trace = oracle::adam_trace(start, grad_fn, 10, cfg.lr, cfg.beta1,
                                        cfg.beta2, cfg.eps);

  Grid theta({4});
  theta.values = start;
  AdamState st = AdamState::for_shapes({{4}}, cfg);
  for (int step = 0; step < 10; ++step) {
    Grid g({4});
    for (int i = 0; i < 4; ++i) g[i] = theta[i] - target[i];
    adam_step({&theta}, {&g}, st);
    for (int i = 0; i < 4; ++i)
      CHECK(oracle::rel_err(theta[i], trace[step][i], 1e-12) < 1e-10);
  }
  CHECK(st.step_count == 10);
}

TEST_CASE("forward, gradients and updates are bitwise deterministic") {
  auto run_once = [](std::vector<double>& out_params,
                     std::vector<double>& out_grads) {
    Rng rng(55);
    Grid x = random_grid({3, 1, 6, 6}, rng);
    Grid k = random_grid({2, 1, 3, 3}, rng);
    Grid b = random_grid({2}, rng);
    Grid w = random_grid({2 * 3 * 3, 4}, rng);
    Grid fb = random_grid({4}, rng);

    Tape t;
    const Tape::Var kv = t.leaf(k, true);
    const Tape::Var bv = t.leaf(b, true);
    const Tape::Var wv = t.leaf(w, true);
    const Tape::Var fbv = t.leaf(fb, true);
    Tape::Var h = t.conv2d(t.leaf(x, false), kv, bv, Padding::same);
    h = t.elu(h);
    h = t.avg_pool2d(h, 2, 2, 2, 2);
    h = t.flatten(h);
    h = t.dense(h, wv, fbv);
    const Tape::Var loss = t.cross_entropy_logits(h, {0, 2, 1});
    t.backward(loss);

    AdamConfig cfg;
    AdamState st = AdamState::for_shapes({k.shape, b.shape, w.shape, fb.shape},
                                         cfg);
    Grid kc = k, bc = b, wc = w, fbc = fb;
    adam_step({&kc, &bc, &wc, &fbc},
              {&t.grad(kv), &t.grad(bv), &t.grad(wv), &t.grad(fbv)}, st);
    for (const Grid* g : {&kc, &bc, &wc, &fbc})
      out_params.insert(out_params.end(), g->values.begin(), g->values.end());
    for (const Tape::Var v : {kv, bv, wv, fbv}) {
      const Grid& g = t.grad(v);
      out_grads.insert(out_grads.end(), g.values.begin(), g.values.end());
    }
  };
  std::vector<double> p1, g1, p2, g2;
  run_once(p1, g1);
  run_once(p2, g2);
  CHECK(std::memcmp(p1.data(), p2.data(), p1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("checkpoints round-trip bit exactly") {
  Rng rng(80);
  ModelParams params;
  params.items.push_back({"layer.w", random_grid({3, 4}, rng), true});
  params.items.push_back({"layer.b", random_grid({4}, rng), true});
  params.items.push_back({"stats.mean", random_grid({4}, rng), false});

  AdamConfig cfg;
  AdamState st = AdamState::for_shapes({{3, 4}, {4}}, cfg);
  st.step_count = 17;
  for (double& v : st.m[0].values) v = rng.uniform(-1.0, 1.0);
  for (double& v : st.v[1].values) v = rng.uniform(0.0, 1.0);

  const std::string path = "ckpt_test_roundtrip.bin";
  save_checkpoint(path, params, &st);
  const Checkpoint ck = load_checkpoint(path);
  REQUIRE(ck.params.items.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ck.params.items[i].name == params.items[i].name);
    CHECK(ck.params.items[i].trainable == params.items[i].trainable);
    CHECK(ck.params.items[i].value.shape == params.items[i].value.shape);
    CHECK(ck.params.items[i].value.values == params.items[i].value.values);
  }
  REQUIRE(ck.adam.has_value());
  CHECK(ck.adam->step_count == 17);
  CHECK(ck.adam->m[0].values == st.m[0].values);
  CHECK(ck.adam->v[1].values == st.v[1].values);

  // Saving the loaded copy reproduces the same bytes.
  const std::string path2 = "ckpt_test_roundtrip2.bin";
  save_checkpoint(path2, ck.params, &*ck.adam);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());

  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint rejects corrupted containers") {
  const std::string path = "ckpt_test_corrupt.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPT garbage";
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);

  ModelParams params;
  params.items.push_back({"w", Grid({2, 2}, 1.0), true});
  save_checkpoint(path, params, nullptr);
  // Truncate the value payload.
  {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 9);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << bytes;
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::remove(path.c_str());
}
