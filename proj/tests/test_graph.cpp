#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "edgepop/graph.hpp"
#include "edgepop/rng.hpp"
#include "edgepop/verify.hpp"

using namespace edgepop;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, RngStream& rng) {
  Tensor<double> t{std::move(shape)};
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

// Builds loss = sum(R * op(inputs...)) so every op output is exercised with
// distinct upstream weights, then checks each trainable input against central
// finite differences of the rebuilt graph.
void fd_check(const std::function<double(std::vector<Tensor<double>>&, bool,
                                         std::vector<Tensor<double>>*)>& eval,
              std::vector<Tensor<double>> inputs, double tol = 1e-5) {
  std::vector<Tensor<double>> analytic;
  eval(inputs, true, &analytic);
  REQUIRE(analytic.size() == inputs.size());
  for (size_t p = 0; p < inputs.size(); ++p) {
    auto loss_fn = [&]() -> double { return eval(inputs, false, nullptr); };
    Tensor<double> fd = fd_gradient(loss_fn, inputs[p], 1e-6);
    CHECK(rel_error(analytic[p], fd) < tol);
  }
}

}  // namespace

TEST_CASE("backward of sum is ones; frozen leaves get no entry") {
  Graph<double> g;
  auto x = g.input(Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}), true, "x");
  auto w = g.input(Tensor<double>::from_data({3}, {5.0, 5.0, 5.0}), false, "w");
  auto loss = g.sum(g.mul(x, w));
  auto grads = g.backward(loss);
  REQUIRE(grads.count(x) == 1);
  CHECK(grads.count(w) == 0);  // frozen: absent from the gradient map
  for (int64_t i = 0; i < 3; ++i) CHECK(grads.at(x)[i] == doctest::Approx(5.0));

  Graph<double> g2;
  auto y = g2.input(Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}), true, "y");
  auto l2 = g2.sum(y);
  auto grads2 = g2.backward(l2);
  for (int64_t i = 0; i < 3; ++i) CHECK(grads2.at(y)[i] == doctest::Approx(1.0));
}

TEST_CASE("backward requires scalar output and valid references") {
  Graph<double> g;
  auto x = g.input(Tensor<double>({2, 2}, 1.0), true, "x");
  CHECK_THROWS_AS(g.backward(x), GraphError);       // not scalar
  CHECK_THROWS_AS(g.matmul(x, 99), GraphError);     // dangling id
  CHECK_THROWS_AS(g.value(-1), GraphError);
}

TEST_CASE("matmul gradients match finite differences over 100 trials") {
  RngStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = randn({3, 4}, rng);
    auto b = randn({4, 2}, rng);
    auto r = randn({3, 2}, rng);
    fd_check(
        [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
          Graph<double> g;
          auto ia = g.input(in[0], true, "a");
          auto ib = g.input(in[1], true, "b");
          auto loss = g.sum(g.mul(g.matmul(ia, ib), g.constant(r)));
          if (out) {
            auto grads = g.backward(loss);
            *out = {grads.at(ia), grads.at(ib)};
          }
          return g.value(loss)[0];
        },
        {a, b});
  }
}

TEST_CASE("conv2d gradients match finite differences over 100 trials") {
  RngStream rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t stride = trial % 2 ? 2 : 1;
    const int64_t pad = trial % 3 ? 1 : 0;
    auto x = randn({2, 2, 5, 5}, rng);
    auto w = randn({3, 2, 3, 3}, rng);
    const int64_t ho = kernels::conv_out_extent(5, 3, stride, pad);
    auto r = randn({2, 3, ho, ho}, rng);
    fd_check(
        [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
          Graph<double> g;
          auto ix = g.input(in[0], true, "x");
          auto iw = g.input(in[1], true, "w");
          auto loss = g.sum(g.mul(g.conv2d(ix, iw, stride, pad), g.constant(r)));
          if (out) {
            auto grads = g.backward(loss);
            *out = {grads.at(ix), grads.at(iw)};
          }
          return g.value(loss)[0];
        },
        {x, w});
  }
}

TEST_CASE("relu, maxpool, sigmoid, cross-entropy gradients vs finite differences") {
  RngStream rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = randn({2, 2, 4, 4}, rng);
    auto r = randn({2, 2, 2, 2}, rng);
    fd_check(
        [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
          Graph<double> g;
          auto ix = g.input(in[0], true, "x");
          auto loss = g.sum(g.mul(g.maxpool2(g.relu(ix)), g.constant(r)));
          if (out) *out = {g.backward(loss).at(ix)};
          return g.value(loss)[0];
        },
        {x});

    auto xs = randn({3, 4}, rng);
    auto rs = randn({3, 4}, rng);
    fd_check(
        [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
          Graph<double> g;
          auto ix = g.input(in[0], true, "x");
          auto loss = g.sum(g.mul(g.sigmoid(ix), g.constant(rs)));
          if (out) *out = {g.backward(loss).at(ix)};
          return g.value(loss)[0];
        },
        {xs});

    auto logits = randn({4, 3}, rng);
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.next_below(3)));
    fd_check(
        [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
          Graph<double> g;
          auto il = g.input(in[0], true, "logits");
          auto loss = g.cross_entropy(il, labels);
          if (out) *out = {g.backward(loss).at(il)};
          return g.value(loss)[0];
        },
        {logits});
  }
}

TEST_CASE("matmul chain loss vs finite differences") {
  RngStream rng(6);
  auto a = randn({3, 5}, rng);
  auto b = randn({5, 4}, rng);
  auto c = randn({4, 2}, rng);
  std::vector<int> labels = {0, 1, 1};
  fd_check(
      [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
        Graph<double> g;
        auto ia = g.input(in[0], true, "a");
        auto ib = g.input(in[1], true, "b");
        auto ic = g.input(in[2], true, "c");
        auto loss = g.cross_entropy(g.matmul(g.relu(g.matmul(ia, ib)), ic), labels);
        if (out) {
          auto grads = g.backward(loss);
          *out = {grads.at(ia), grads.at(ib), grads.at(ic)};
        }
        return g.value(loss)[0];
      },
      {a, b, c});
}

TEST_CASE("transpose, add, sub, reshape round through backward") {
  RngStream rng(7);
  auto a = randn({3, 4}, rng);
  auto b = randn({3, 4}, rng);
  auto c = randn({3, 4}, rng);
  auto r = randn({4, 3}, rng);
  fd_check(
      [&](std::vector<Tensor<double>>& in, bool, std::vector<Tensor<double>>* out) {
        Graph<double> g;
        auto ia = g.input(in[0], true, "a");
        auto ib = g.input(in[1], true, "b");
        auto t = g.transpose2d(g.sub(g.add(ia, ib), g.mul(ib, g.constant(c))));
        auto loss = g.sum(g.mul(g.reshape(t, {4, 3}), g.constant(r)));
        if (out) {
          auto grads = g.backward(loss);
          *out = {grads.at(ia), grads.at(ib)};
        }
        return g.value(loss)[0];
      },
      {a, b});
}
