#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "edgepop/optim.hpp"

using namespace edgepop;

TEST_CASE("sgd without momentum or decay is the plain update rule") {
  Tensor<double> p({1}, 1.0);
  Tensor<double> g({1}, 3.0);
  Tensor<double> v;
  sgd_update(p, g, v, SgdOptions{0.1, 0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.7));
  CHECK_THROWS_AS(sgd_update(p, Tensor<double>({2}), v, SgdOptions{}), DimError);
}

TEST_CASE("sgd momentum matches the hand-unrolled recursion") {
  Tensor<double> p({1}, 0.5);
  Tensor<double> v;
  const SgdOptions opt{0.2, 0.9, 0.0};
  Tensor<double> g1({1}, 1.0), g2({1}, -2.0);
  sgd_update(p, g1, v, opt);
  // v1 = 1.0, p = 0.5 - 0.2 = 0.3
  CHECK(p[0] == doctest::Approx(0.3));
  sgd_update(p, g2, v, opt);
  // v2 = 0.9 - 2.0 = -1.1, p = 0.3 + 0.22 = 0.52
  CHECK(p[0] == doctest::Approx(0.52));
}

TEST_CASE("weight decay shrinks a zero-gradient parameter by lr*wd per step") {
  Tensor<double> p({1}, 2.0);
  Tensor<double> g({1}, 0.0);
  Tensor<double> v;
  const SgdOptions opt{0.1, 0.0, 1e-4};
  sgd_update(p, g, v, opt);
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 1e-4)));
}

TEST_CASE("adam first step moves by about lr; zero gradients change nothing") {
  Tensor<double> p({4}, 1.0);
  Tensor<double> g({4}, 1.0);
  AdamState<double> st;
  const AdamOptions opt{3e-4, 0.9, 0.999, 1e-8};
  adam_update(p, g, st, opt);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(1.0 - p[i] == doctest::Approx(3e-4).epsilon(1e-4));
  }

  Tensor<double> p2({4}, 1.0);
  Tensor<double> z({4}, 0.0);
  AdamState<double> st2;
  adam_update(p2, z, st2, opt);
  for (int64_t i = 0; i < 4; ++i) CHECK(p2[i] == 1.0);
}

TEST_CASE("adam trajectory matches an independent scalar implementation to 1e-12") {
  // scalar reference, written without reuse of the tensor kernel
  double m = 0.0, v = 0.0, x = 0.7;
  const double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Tensor<double> p({1}, 0.7);
  AdamState<double> st;
  const AdamOptions opt{lr, b1, b2, eps};
  for (int step = 1; step <= 10; ++step) {
    const double grad = std::sin(static_cast<double>(step)) + 0.3 * x;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mhat = m / (1 - std::pow(b1, step));
    const double vhat = v / (1 - std::pow(b2, step));
    x -= lr * mhat / (std::sqrt(vhat) + eps);

    Tensor<double> g({1}, std::sin(static_cast<double>(step)) + 0.3 * p[0]);
    adam_update(p, g, st, opt);
    REQUIRE(p[0] == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 0.1) == doctest::Approx(0.1));
  CHECK(cosine_lr(100, 100, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 0.1) == doctest::Approx(0.05));
  CHECK_THROWS_AS(cosine_lr(-1, 100, 0.1), ParamError);
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.1), ParamError);
}

TEST_CASE("optimizer refuses frozen tensors") {
  Tensor<float> p({2}, 1.0f);
  Tensor<float> g({2}, 0.0f);
  std::vector<ParamSlot<float>> slots{{&p, &g, true, "frozen/weights"}};
  CHECK_THROWS_AS(Optimizer<float>(OptimizerKind::Sgd, SgdOptions{}, AdamOptions{}, slots),
                  ParamError);
}

TEST_CASE("optimizer steps every registered slot") {
  Tensor<float> p1({2}, 1.0f), g1({2}, 1.0f);
  Tensor<float> p2({3}, 1.0f), g2({3}, -1.0f);
  std::vector<ParamSlot<float>> slots{{&p1, &g1, false, "a"}, {&p2, &g2, false, "b"}};
  Optimizer<float> opt(OptimizerKind::Sgd, SgdOptions{0.5, 0.0, 0.0}, AdamOptions{}, slots);
  opt.step();
  CHECK(p1[0] == doctest::Approx(0.5f));
  CHECK(p2[0] == doctest::Approx(1.5f));
  opt.set_lr(0.25);
  CHECK(opt.lr() == doctest::Approx(0.25));
}
