#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "edgepop/suites.hpp"
#include "edgepop/verify.hpp"

using namespace edgepop;

TEST_CASE("subnetwork_count is the exact binomial") {
  CHECK(subnetwork_count(4, 0.5) == 6);
  CHECK(subnetwork_count(10, 0.5) == 252);
  CHECK(subnetwork_count(10, 0.5) > subnetwork_count(10, 0.3));  // maximized near k = 0.5
  CHECK(subnetwork_count(10, 0.3) == BigInt(120));               // C(10,3)
  CHECK(subnetwork_count(0, 0.5) == 1);
  CHECK_THROWS_AS(subnetwork_count(-1, 0.5), ParamError);
  // big-integer regime: C(1000, 500) has 300 digits
  CHECK(subnetwork_count(1000, 0.5).str().size() == 300);
}

TEST_CASE("combination unranking enumerates each subset once, in order") {
  std::set<std::vector<int64_t>> seen;
  for (int64_t i = 0; i < 10; ++i) {
    auto c = detail::unrank_combination(5, 2, i);
    REQUIRE(c.size() == 2);
    CHECK(c[0] < c[1]);
    seen.insert(c);
  }
  CHECK(seen.size() == 10);
  CHECK(detail::unrank_combination(5, 2, 0) == std::vector<int64_t>{0, 1});
  CHECK(detail::unrank_combination(5, 2, 9) == std::vector<int64_t>{3, 4});
}

namespace {

Model<double> tiny_two_layer(uint64_t seed, int64_t in, int64_t hidden, int64_t classes) {
  RngStream rng(seed);
  Model<double> m;
  RngStream w1r = rng.fork("l1w");
  Tensor<double> w1 = kaiming_normal<double>({hidden, in}, in, w1r);
  RngStream s1r = rng.fork("l1s");
  Tensor<double> s1 = score_init<double>({hidden, in}, in, s1r);
  m.add(std::make_unique<MaskedLinear<double>>("l1", std::move(w1), std::move(s1), 0.5, false));
  m.add(std::make_unique<ReluLayer<double>>("relu"));
  RngStream w2r = rng.fork("l2w");
  Tensor<double> w2 = kaiming_normal<double>({classes, hidden}, hidden, w2r);
  RngStream s2r = rng.fork("l2s");
  Tensor<double> s2 = score_init<double>({classes, hidden}, hidden, s2r);
  m.add(std::make_unique<MaskedLinear<double>>("l2", std::move(w2), std::move(s2), 0.5, false));
  m.set_meta(Algorithm::EdgePopup, 0.5, {in});
  return m;
}

}  // namespace

TEST_CASE("brute force enumerates the full product of per-layer combinations") {
  RngStream rng(7);
  auto [train, test] = synth_blobs<double>(2, 2, 30, 0.7, rng.fork("data"));
  (void)test;
  // two layers of 4 weights each at k = 0.5: 6 * 6 = 36 combinations
  Model<double> m = tiny_two_layer(11, 2, 2, 2);
  BruteForceResult r = brute_force_subnets(m, train, 0.5);
  CHECK(r.enumerated_count == 36);
  CHECK(BigInt(r.enumerated_count) == subnetwork_count(4, 0.5) * subnetwork_count(4, 0.5));
  CHECK(r.losses.size() == 36);
  CHECK(r.min_loss == r.best_loss);
  CHECK(r.max_loss > r.min_loss);  // nondegenerate spread
  CHECK(r.median_loss >= r.min_loss);
  CHECK(r.median_loss <= r.max_loss);
  CHECK(r.best_mask_indices.size() == 2);
  CHECK(r.best_mask_indices[0].size() == 2);  // keep 2 of 4

  // budget refusal carries the computed count
  Model<double> big = tiny_two_layer(12, 10, 12, 4);
  try {
    brute_force_subnets(big, train, 0.5, 1000);
    FAIL("expected refusal");
  } catch (const ParamError& e) {
    CHECK(std::string(e.what()).find("budget") != std::string::npos);
  }
}

TEST_CASE("random mask losses share the keep count and vary") {
  RngStream rng(8);
  auto [train, test] = synth_blobs<double>(3, 4, 30, 0.7, rng.fork("data"));
  (void)test;
  Model<double> m = tiny_two_layer(13, 4, 4, 3);
  RngStream mr(9);
  auto losses = random_mask_losses(m, train, 20, mr);
  CHECK(losses.size() == 20);
  double lo = losses[0], hi = losses[0];
  for (double l : losses) {
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  CHECK(hi > lo);
}

TEST_CASE("constructed single-swap instance shows strict loss decrease") {
  auto r = construct_single_swap<double>(101);
  CHECK(r.success);
  CHECK(r.halvings <= 20);
  CHECK(r.loss_after < r.loss_before);
  CHECK(r.first_order < 0.0);
}

TEST_CASE("harvested swaps conserve edge counts and stay in one layer") {
  RngStream rng(10);
  auto [train, test] = synth_blobs<double>(3, 6, 40, 1.2, rng.fork("data"));
  (void)test;
  Model<double> m = tiny_two_layer(14, 6, 8, 3);
  TheoremCheckOptions opt;
  opt.lr = 1e-3;  // coarse on purpose: we want events, not the pass criterion
  opt.steps = 400;
  RngStream hr(11);
  auto rep = theorem1_general(m, train, opt, hr);
  CHECK(rep.steps_run == 400);
  for (const auto& ev : rep.events) {
    CHECK(ev.entered.size() == ev.exited.size());
    CHECK(!ev.entered.empty());
    CHECK(std::isfinite(ev.loss_before));
    CHECK(std::isfinite(ev.loss_after));
  }
  CHECK(rep.decreased + rep.violated == static_cast<int64_t>(rep.events.size()));
}

TEST_CASE("single-swap qualifier requires a shared receiving node") {
  RngStream rng(15);
  auto [train, test] = synth_blobs<double>(3, 6, 40, 1.2, rng.fork("data"));
  (void)test;
  Model<double> m = tiny_two_layer(16, 6, 8, 3);
  TheoremCheckOptions opt;
  opt.lr = 1e-3;
  opt.steps = 400;
  RngStream hr(17);
  auto rep = theorem1_single_swap(m, train, opt, hr);
  auto layers = m.selectable();
  for (const auto& ev : rep.events) {
    REQUIRE(ev.entered.size() == 1);
    REQUIRE(ev.exited.size() == 1);
    const SelectableLayer<double>* layer = nullptr;
    for (auto* l : layers) {
      if (l->name() == ev.layer_id) layer = l;
    }
    REQUIRE(layer != nullptr);
    CHECK(layer->receiver_of(ev.entered[0]) == layer->receiver_of(ev.exited[0]));
  }
}

TEST_CASE("fd_gradient recovers analytic gradients of a quadratic") {
  Tensor<double> x = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5});
  auto f = [&]() {
    double acc = 0.0;
    for (int64_t i = 0; i < 3; ++i) acc += x[i] * x[i];
    return acc;
  };
  auto g = fd_gradient(f, x, 1e-6);
  for (int64_t i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-7));
}

TEST_CASE("rel_error normalizes by the larger magnitude") {
  auto a = Tensor<double>::from_data({2}, {1.0, 2.0});
  auto b = Tensor<double>::from_data({2}, {1.0, 2.0002});
  CHECK(rel_error(a, b) == doctest::Approx(0.0001).epsilon(0.01));
  CHECK(rel_error(a, a) == 0.0);
}

TEST_CASE("verify suites: topk runs clean end to end") {
  auto r = verify_topk(7);
  CHECK(r.passed);
  CHECK(r.data["matches"] == 1000);
}
