#include <cmath>
#include <limits>

#include "advi/core/grad_check.hpp"
#include "advi/core/graph.hpp"
#include "advi/core/optimizer.hpp"
#include "advi/error.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace advi;
using namespace advi::core;
using testing::random_tensor;

TEST_SUITE("core") {

TEST_CASE("tensor shape contract") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  const Tensor s = Tensor({3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5}).slice_rows(1, 3);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s[0] == 2.0);
  t.grad()[0] = 1.0;
  CHECK(t.grad().size() == t.size());
}

TEST_CASE("relu, softmax and convolution examples") {
  ComputeGraph g;
  auto x = g.input("x", {3});
  auto r = g.relu(x);
  g.forward({{"x", Tensor({1, 3}, {-1, 0, 2})}});
  CHECK(g.value(r) == Tensor({1, 3}, {0, 0, 2}));

  ComputeGraph s;
  auto z = s.input("z", {4});
  auto p = s.softmax(z);
  s.forward({{"z", Tensor({1, 4})}});
  for (double v : s.value(p).data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  ComputeGraph c;
  auto img = c.input("img", {1, 5, 5});
  auto out = c.conv2d(img, c.parameter("w", Tensor({1, 1, 3, 3}, 1.0)),
                      c.parameter("b", Tensor({1})), 1, 0);
  c.forward({{"img", Tensor({1, 1, 5, 5}, 1.0)}});
  CHECK(c.value(out).shape() == Shape{1, 1, 3, 3});
  for (double v : c.value(out).data()) CHECK(v == 9.0);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(2);
  ComputeGraph g;
  auto z = g.input("z", {7});
  auto p = g.softmax(z);
  g.forward({{"z", random_tensor({20, 7}, rng, -30, 30)}});
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 7; ++k) {
      const double v = g.value(p)[i * 7 + k];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("backward examples") {
  ComputeGraph g;
  auto w = g.parameter("w", Tensor({2, 3}, 0.5));
  auto u = g.parameter("unused", Tensor({4}, 2.0));
  auto loss = g.sum_all(w);
  g.forward({});
  g.backward(loss);
  for (double v : g.grad(w)) CHECK(v == 1.0);
  for (double v : g.grad(u)) CHECK(v == 0.0);

  ComputeGraph h;
  auto x = h.input("x", {3});
  auto p = h.parameter("p", Tensor({3}, 1.0));
  auto l = h.sum_all(x);
  (void)p;
  h.forward({{"x", Tensor({2, 3}, 1.0)}});
  h.backward(l);
  for (double v : h.grad(p)) CHECK(v == 0.0);
}

TEST_CASE("backward and forward errors") {
  ComputeGraph g;
  auto x = g.input("x", {3});
  auto y = g.scale_shift(x, 1e308, 0.0);
  auto l = g.sum_all(y);
  CHECK_THROWS_AS(g.backward(l), ConfigError);
  CHECK_THROWS_AS(g.forward({{"x", Tensor({1, 4})}}), ShapeError);
  CHECK_THROWS_AS(g.forward({}), ConfigError);
  CHECK_THROWS_AS(g.forward({{"x", Tensor({1, 3}, 10.0)}}), NumericError);
  g.forward({{"x", Tensor({1, 3}, 1e-300)}});
  CHECK_THROWS_AS(g.backward(y), ShapeError);
}

TEST_CASE("forward is deterministic") {
  Rng rng(4);
  ComputeGraph g;
  auto x = g.input("x", {2, 6, 6});
  auto c = g.relu(g.conv2d(x, g.parameter("w", random_tensor({3, 2, 3, 3}, rng)),
                           g.parameter("b", random_tensor({3}, rng)), 1, 1));
  auto l = g.sum_all(g.max_pool2(c));
  const Tensor in = random_tensor({2, 2, 6, 6}, rng);
  g.forward({{"x", in}});
  g.backward(l);
  const Tensor v1 = g.value(l);
  const std::vector<double> g1(g.grad(x).begin(), g.grad(x).end());
  g.forward({{"x", in}});
  g.backward(l);
  CHECK(g.value(l) == v1);
  CHECK(std::vector<double>(g.grad(x).begin(), g.grad(x).end()) == g1);
}

TEST_CASE("linear layer gradients are exact") {
  Rng rng(5);
  ComputeGraph g;
  auto x = g.input("x", {4});
  auto y = g.linear(x, g.parameter("w", random_tensor({3, 4}, rng)),
                    g.parameter("b", random_tensor({3}, rng)));
  auto l = g.sum_all(y);
  GradCheckOptions o;
  o.tolerance = 1e-6;
  o.inputs = {"x"};
  const auto r = grad_check(g, {{"x", random_tensor({2, 4}, rng)}}, l, o);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("relu at exactly zero is excluded from the check") {
  ComputeGraph g;
  auto x = g.input("x", {2});
  auto l = g.sum_all(g.relu(x));
  GradCheckOptions o;
  o.inputs = {"x"};
  const auto r = grad_check(g, {{"x", Tensor({1, 2}, {0.0, 1.0})}}, l, o);
  REQUIRE(r.blocks.size() == 1);
  CHECK(r.blocks[0].skipped == 1);
  CHECK(r.blocks[0].checked == 1);
  CHECK(r.passed);
}

TEST_CASE("every node kind passes a gradient check on random shapes") {
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(3), side = 4 + 2 * rng.below(3);
    const std::size_t batch = 3, k = 2 + rng.below(4);
    ComputeGraph g;
    auto x = g.input("x", {ci, side, side});
    auto t = g.input("t", {k});
    auto scaled = g.scale_shift(x, 0.7, -0.1);
    auto c1 = g.conv2d(scaled, g.parameter("w1", random_tensor({co, ci, 3, 3}, rng, -0.5, 0.5)),
                       g.parameter("b1", random_tensor({co}, rng)), 1 + rng.below(2), 1);
    auto h = g.relu(c1);
    auto sum = g.add(h, g.scale_shift(c1, 0.5, 0.0));
    auto f = g.flatten(sum);
    g.forward({{"x", random_tensor({batch, ci, side, side}, rng)}, {"t", Tensor({batch, k})}}, f);
    const std::size_t width = g.value(f).size() / batch;
    auto logits = g.linear(f, g.parameter("wl", random_tensor({k, width}, rng, -0.3, 0.3)),
                           g.parameter("bl", random_tensor({k}, rng)));
    auto ce = g.cross_entropy(logits, t);
    auto sm = g.softmax(logits);
    auto sd = g.squared_distance(g.slice_rows(sm, 0, 1), g.slice_rows(sm, 2, 3));
    auto loss = g.weighted_sum({ce, sd}, {1.0, 3.0});
    Tensor target({batch, k});
    for (std::size_t i = 0; i < batch; ++i) target[i * k + rng.below(k)] = 1.0;
    GradCheckOptions o;
    o.inputs = {"x"};
    const auto r = grad_check(g, {{"x", random_tensor({batch, ci, side, side}, rng)}, {"t", target}},
                              loss, o);
    CAPTURE(trial);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("max pool sends the gradient to the first maximum") {
  ComputeGraph g;
  auto x = g.input("x", {1, 2, 2});
  auto l = g.sum_all(g.max_pool2(x));
  g.forward({{"x", Tensor({1, 1, 2, 2}, {3, 3, 1, 3})}});
  g.backward(l);
  const auto gr = g.grad(x);
  CHECK(gr[0] == 1.0);
  CHECK(gr[1] == 0.0);
  CHECK(gr[3] == 0.0);
}

TEST_CASE("splitting a graph reproduces the chain rule") {
  Rng rng(9);
  ComputeGraph g;
  auto x = g.input("x", {2, 4, 4});
  auto h = g.relu(g.conv2d(x, g.parameter("w", random_tensor({3, 2, 3, 3}, rng)),
                           g.parameter("b", random_tensor({3}, rng)), 1, 1));
  auto mid = g.max_pool2(h);
  auto out = g.linear(g.flatten(mid), g.parameter("wl", random_tensor({2, 12}, rng)),
                      g.parameter("bl", random_tensor({2}, rng)));
  auto loss = g.sum_all(g.softmax(out));
  auto loss2 = g.weighted_sum({g.sum_all(out)}, {0.5});
  const Tensor in = random_tensor({2, 2, 4, 4}, rng);
  g.forward({{"x", in}});
  g.backward(loss2);
  const Tensor mid_value = g.value(mid);
  const std::vector<double> full(g.grad(mid).begin(), g.grad(mid).end());
  const std::vector<double> wl_full(g.grad(*g.find("wl")).begin(), g.grad(*g.find("wl")).end());
  // Splice the same value back in: downstream gradients must not change.
  g.forward_from(mid, mid_value);
  g.backward(loss2);
  CHECK(std::vector<double>(g.grad(mid).begin(), g.grad(mid).end()) == full);
  CHECK(std::vector<double>(g.grad(*g.find("wl")).begin(), g.grad(*g.find("wl")).end()) == wl_full);
  (void)loss;
}

TEST_CASE("optimizer examples") {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g{1.0, 1.0, 1.0};
  const std::array<std::size_t, 1> sizes{3};
  const std::array<std::span<const double>, 1> grads{std::span<const double>(g)};

  {
    OptimizerState s({OptimizerKind::Adam, 0.0}, sizes);
    auto q = p;
    const std::array<std::span<double>, 1> params{std::span<double>(q)};
    s.step(params, grads);
    CHECK(q == p);
    CHECK(s.steps() == 1);
  }
  {
    OptimizerState s({OptimizerKind::Adam, 0.1}, sizes);
    auto q = p;
    const std::array<std::span<double>, 1> params{std::span<double>(q)};
    s.step(params, grads);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] - q[i] == doctest::Approx(0.1).epsilon(1e-6));
  }
  {
    OptimizerState s({OptimizerKind::SgdMomentum, 0.1, 0.0}, sizes);
    auto q = p;
    const std::array<std::span<double>, 1> params{std::span<double>(q)};
    s.step(params, grads);
    s.step(params, grads);
    for (std::size_t i = 0; i < 3; ++i) CHECK(q[i] == p[i] - 0.1 * g[i] - 0.1 * g[i]);
  }
  {
    // v1 = g, v2 = mu g + g.
    OptimizerState s({OptimizerKind::SgdMomentum, 0.1, 0.9}, sizes);
    auto q = p;
    const std::array<std::span<double>, 1> params{std::span<double>(q)};
    s.step(params, grads);
    s.step(params, grads);
    CHECK(q[0] == doctest::Approx(1.0 - 0.1 - 0.19));
  }
  {
    OptimizerState s({OptimizerKind::Adam, 0.1}, sizes);
    std::vector<double> bad(2);
    const std::array<std::span<double>, 1> params{std::span<double>(bad)};
    CHECK_THROWS_AS(s.step(params, grads), ShapeError);
  }
}

}  // TEST_SUITE
