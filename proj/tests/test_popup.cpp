#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "edgepop/popup.hpp"
#include "edgepop/rng.hpp"

using namespace edgepop;

namespace {

Tensor<double> stable_sort_oracle(const Tensor<double>& scores, double k) {
  const int64_t n = scores.numel();
  const int64_t j = drop_count(n, k);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return std::abs(scores[a]) < std::abs(scores[b]);
  });
  Tensor<double> mask{scores.shape()};
  mask.fill(1.0);
  for (int64_t i = 0; i < j; ++i) mask[order[static_cast<size_t>(i)]] = 0.0;
  return mask;
}

}  // namespace

TEST_CASE("keep and drop counts follow floor((1-k)n)") {
  CHECK(drop_count(10, 0.33) == 6);
  CHECK(keep_count(10, 0.33) == 4);
  CHECK(drop_count(4, 1.0) == 0);
  CHECK(keep_count(100, 0.3) == 30);
  CHECK(keep_count(7, 0.01) == 1);  // keep count never reaches zero for k > 0
  CHECK_THROWS_AS(keep_count(10, 0.0), ParamError);
  CHECK_THROWS_AS(keep_count(10, 1.5), ParamError);
  CHECK_THROWS_AS(keep_count(10, -0.2), ParamError);
}

TEST_CASE("get_subnet hand examples") {
  auto m1 = get_subnet(Tensor<double>::from_data({4}, {0.1, 0.5, 0.3, 0.2}), 0.5);
  CHECK(m1[0] == 0.0);
  CHECK(m1[1] == 1.0);
  CHECK(m1[2] == 1.0);
  CHECK(m1[3] == 0.0);

  auto m2 = get_subnet(Tensor<double>::from_data({4}, {0.1, 0.5, 0.3, 0.2}), 1.0);
  for (int64_t i = 0; i < 4; ++i) CHECK(m2[i] == 1.0);

  // ranking by magnitude, not signed value
  auto m3 = get_subnet(Tensor<double>::from_data({2}, {-0.9, 0.1}), 0.5);
  CHECK(m3[0] == 1.0);
  CHECK(m3[1] == 0.0);

  // exact ties: the lowest flat indices are zeroed first
  auto m4 = get_subnet(Tensor<double>::from_data({3}, {0.4, 0.4, 0.4}), 0.34);
  CHECK(m4[0] == 0.0);
  CHECK(m4[1] == 1.0);
  CHECK(m4[2] == 1.0);

  Tensor<double> s({10});
  CHECK(mask_popcount(get_subnet(s, 0.33)) == 4);

  CHECK_THROWS_AS(get_subnet(s, 0.0), ParamError);
  CHECK_THROWS_AS(get_subnet(s, 1.01), ParamError);
  CHECK_THROWS_AS(get_subnet(Tensor<double>{}, 0.5), ParamError);
}

TEST_CASE("get_subnet equals the stable-sort oracle on random vectors with ties") {
  RngStream rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const int64_t n = 1 + static_cast<int64_t>(rng.next_below(64));
    const double k = 0.1 + 0.1 * static_cast<double>(rng.next_below(9));
    Tensor<double> s({n});
    const bool lattice = rng.bernoulli(0.5);
    for (int64_t i = 0; i < n; ++i) {
      s[i] = lattice ? 0.25 * (static_cast<double>(rng.next_below(5)) - 2.0) : rng.normal();
    }
    auto got = get_subnet(s, k);
    auto want = stable_sort_oracle(s, k);
    for (int64_t i = 0; i < n; ++i) REQUIRE(got[i] == want[i]);
    REQUIRE(mask_popcount(got) == keep_count(n, k));
  }
}

TEST_CASE("positive rescaling never changes the selected subnetwork") {
  RngStream rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng.next_below(40));
    Tensor<double> s({n});
    for (int64_t i = 0; i < n; ++i) s[i] = rng.normal();
    const double k = 0.1 + 0.1 * static_cast<double>(rng.next_below(9));
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    Tensor<double> scaled = s;
    for (int64_t i = 0; i < n; ++i) scaled[i] *= c;
    auto m1 = get_subnet(s, k);
    auto m2 = get_subnet(scaled, k);
    for (int64_t i = 0; i < n; ++i) REQUIRE(m1[i] == m2[i]);
  }
}

TEST_CASE("straight-through score gradient arithmetic") {
  CHECK(ste_score_grad(2.0, 0.5, 3.0) == doctest::Approx(3.0));
  CHECK(ste_score_grad(2.0, 0.5, 0.0) == doctest::Approx(0.0));
  CHECK(ste_score_grad(-1.5, 2.0, 1.0) == doctest::Approx(-3.0));
}

TEST_CASE("score_step follows the update rule on raw signed scores") {
  // s = 1.0, g = 3.0, lr = 0.1, no momentum/weight decay -> 0.7
  Tensor<double> s({1}, 1.0);
  Tensor<double> g({1}, 3.0);
  Tensor<double> vel;
  score_step(s, g, vel, SgdOptions{0.1, 0.0, 0.0});
  CHECK(s[0] == doctest::Approx(0.7));

  // crossing zero: stored score goes negative, ranking key is its magnitude
  Tensor<double> s2({2});
  s2[0] = 0.1;
  s2[1] = 0.15;
  Tensor<double> g2({2});
  g2[0] = 3.0;
  g2[1] = 0.0;
  Tensor<double> vel2;
  score_step(s2, g2, vel2, SgdOptions{0.1, 0.0, 0.0});
  CHECK(s2[0] == doctest::Approx(-0.2));
  auto mask = get_subnet(s2, 0.5);
  CHECK(mask[0] == 1.0);  // |-0.2| beats 0.15
  CHECK(mask[1] == 0.0);

  // two steps with momentum follow the hand-computed velocity recursion
  Tensor<double> s3({1}, 1.0);
  Tensor<double> vel3;
  Tensor<double> ga({1}, 2.0), gb({1}, -1.0);
  const SgdOptions opt{0.1, 0.9, 0.0};
  score_step(s3, ga, vel3, opt);
  score_step(s3, gb, vel3, opt);
  // v1 = 2; s = 1 - 0.2 = 0.8; v2 = 0.9*2 - 1 = 0.8; s = 0.8 - 0.08 = 0.72
  CHECK(s3[0] == doctest::Approx(0.72));

  // clamp variant stores magnitudes
  Tensor<double> s4({1}, 0.1);
  Tensor<double> vel4;
  score_step(s4, g, vel4, SgdOptions{0.1, 0.0, 0.0}, true);
  CHECK(s4[0] == doctest::Approx(0.2));

  Tensor<double> wrong({3});
  CHECK_THROWS_AS(score_step(s4, wrong, vel4, SgdOptions{}), DimError);
}

TEST_CASE("detect_swaps") {
  auto a = Tensor<double>::from_data({2}, {1.0, 0.0});
  auto b = Tensor<double>::from_data({2}, {0.0, 1.0});
  CHECK_FALSE(detect_swaps(a, a, "l").has_value());
  auto ev = detect_swaps(a, b, "l");
  REQUIRE(ev.has_value());
  CHECK(ev->entered == std::vector<int64_t>{1});
  CHECK(ev->exited == std::vector<int64_t>{0});
  CHECK(ev->layer_id == "l");

  CHECK_THROWS_AS(detect_swaps(a, Tensor<double>({3}), "l"), DimError);

  // equal popcount conserves edge count
  RngStream rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = 8 + static_cast<int64_t>(rng.next_below(32));
    Tensor<double> s1({n}), s2({n});
    for (int64_t i = 0; i < n; ++i) {
      s1[i] = rng.normal();
      s2[i] = rng.normal();
    }
    auto m1 = get_subnet(s1, 0.5);
    auto m2 = get_subnet(s2, 0.5);
    if (auto e = detect_swaps(m1, m2, "x")) {
      REQUIRE(e->entered.size() == e->exited.size());
    }
  }
}

TEST_CASE("masked-out edges still receive gradient (re-entry capability)") {
  // An edge with tiny score magnitude is out of the subnet, but
  // ste_score_grad does not consult the mask at all.
  const double g = ste_score_grad(0.7, -1.2, 2.0);
  CHECK(g != 0.0);
}
