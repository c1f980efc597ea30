#include "edgepop/suites.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "edgepop/data.hpp"
#include "edgepop/model.hpp"
#include "edgepop/train.hpp"
#include "edgepop/verify.hpp"

namespace edgepop {

namespace {

// The acceptance oracle: stable ascending sort on (|score|, flat index),
// zero the first floor((1-k)*n).
template <typename T>
Tensor<T> topk_stable_sort_oracle(const Tensor<T>& scores, double k) {
  const int64_t n = scores.numel();
  const int64_t j = drop_count(n, k);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return std::abs(scores[a]) < std::abs(scores[b]);
  });
  Tensor<T> mask{scores.shape()};
  mask.fill(T{1});
  for (int64_t i = 0; i < j; ++i) mask[order[static_cast<size_t>(i)]] = T{0};
  return mask;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Small popup MLP on a blobs task, built once per suite.
struct MlpFixture {
  Dataset<double> train;
  Dataset<double> test;
  Model<double> model;
};

MlpFixture make_mlp_fixture(uint64_t seed, int64_t classes, int64_t dim, int64_t width,
                            double spread, double k, InitKind kind = InitKind::KaimingNormal) {
  RngStream rng(seed);
  auto [train, test] = synth_blobs<double>(classes, dim, 60, spread, rng.fork("data"));
  ArchSpec arch{ArchName::Mlp, Rational{width, 256}, classes};
  InitSpec init{kind, false, 1.0};
  RngStream mrng = rng.fork("model");
  Model<double> model =
      build_model<double>(arch, k, init, Algorithm::EdgePopup, {dim}, mrng);
  return {std::move(train), std::move(test), std::move(model)};
}

}  // namespace

SuiteResult verify_topk(uint64_t seed) {
  SuiteResult r;
  r.name = "topk";
  RngStream rng(seed);
  const std::vector<double> ks = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int64_t trials = 0, matches = 0, popcount_ok = 0;
  RngStream vec_rng = rng.fork("vectors");
  for (int64_t t = 0; t < 1000; ++t) {
    const int64_t n = 1 + static_cast<int64_t>(vec_rng.next_below(64));
    const double k = ks[static_cast<size_t>(vec_rng.next_below(ks.size()))];
    Tensor<double> s({n});
    const bool with_ties = vec_rng.bernoulli(0.5);
    for (int64_t i = 0; i < n; ++i) {
      // Half the vectors draw from a 5-point lattice so exact |score| ties
      // (including sign pairs) are common.
      s[i] = with_ties ? (static_cast<double>(vec_rng.next_below(5)) - 2.0) * 0.25
                       : vec_rng.normal();
    }
    Tensor<double> got = get_subnet(s, k);
    Tensor<double> want = topk_stable_sort_oracle(s, k);
    ++trials;
    bool same = true;
    for (int64_t i = 0; i < n; ++i) same = same && got[i] == want[i];
    matches += same ? 1 : 0;
    popcount_ok += mask_popcount(got) == keep_count(n, k) ? 1 : 0;
  }
  r.passed = matches == trials && popcount_ok == trials;
  r.detail = std::to_string(matches) + "/" + std::to_string(trials) +
             " oracle matches, keep counts exact";
  r.data = {{"trials", trials}, {"matches", matches}, {"popcount_ok", popcount_ok}};
  return r;
}

SuiteResult verify_gradients(uint64_t seed) {
  SuiteResult r;
  r.name = "gradients";
  RngStream rng(seed);

  double ste_err = 0.0, dense_err = 0.0;
  std::string worst_ste, worst_dense;
  auto absorb = [&](const GradOracleReport& g) {
    if (g.max_ste_rel_err > ste_err) {
      ste_err = g.max_ste_rel_err;
      worst_ste = g.worst_ste_tensor;
    }
    if (g.max_dense_rel_err > dense_err) {
      dense_err = g.max_dense_rel_err;
      worst_dense = g.worst_dense_tensor;
    }
  };

  // Masked MLP.
  {
    auto fx = make_mlp_fixture(seed + 1, 3, 6, 16, 1.0, 0.5);
    std::vector<int32_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
    auto [x, y] = gather(fx.train, idx);
    absorb(gradient_oracle(fx.model, x, y));
  }

  // Masked conv stack: conv -> relu -> pool -> flatten -> linear.
  auto build_conv_stack = [&](bool dense) {
    Model<double> m;
    RngStream mr = rng.fork(dense ? "conv_dense" : "conv_popup");
    RngStream wr = mr.fork("conv1/weights");
    Tensor<double> w = kaiming_normal<double>({4, 3, 3, 3}, 27, wr);
    RngStream sr = mr.fork("conv1/scores");
    Tensor<double> s = score_init<double>({4, 3, 3, 3}, 27, sr);
    m.add(std::make_unique<MaskedConv<double>>("conv1", std::move(w), std::move(s), 0.5, 1, 1,
                                               dense));
    m.add(std::make_unique<ReluLayer<double>>("relu1"));
    m.add(std::make_unique<MaxPool2Layer<double>>("pool1"));
    m.add(std::make_unique<FlattenLayer<double>>("flatten"));
    RngStream wr2 = mr.fork("fc/weights");
    Tensor<double> w2 = kaiming_normal<double>({3, 64}, 64, wr2);
    RngStream sr2 = mr.fork("fc/scores");
    Tensor<double> s2 = score_init<double>({3, 64}, 64, sr2);
    m.add(std::make_unique<MaskedLinear<double>>("fc", std::move(w2), std::move(s2), 0.5, dense));
    m.set_meta(dense ? Algorithm::DenseSgd : Algorithm::EdgePopup, dense ? 1.0 : 0.5, {3, 8, 8});
    return m;
  };

  RngStream xr = rng.fork("conv_input");
  Tensor<double> x({2, 3, 8, 8});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = xr.normal();
  std::vector<int> y = {1, 2};

  {
    Model<double> m = build_conv_stack(false);
    absorb(gradient_oracle(m, x, y));
  }
  {
    Model<double> m = build_conv_stack(true);
    absorb(gradient_oracle(m, x, y));
  }
  // Dense MLP for the linear finite-difference path.
  {
    RngStream mrng = rng.fork("dense_mlp");
    ArchSpec arch{ArchName::Mlp, Rational{1, 16}, 3};
    InitSpec init{InitKind::KaimingNormal, false, 1.0};
    Model<double> m = build_model<double>(arch, 1.0, init, Algorithm::DenseSgd, {6}, mrng);
    RngStream ir = rng.fork("dense_input");
    Tensor<double> xd({8, 6});
    for (int64_t i = 0; i < xd.numel(); ++i) xd[i] = ir.normal();
    std::vector<int> yd;
    for (int i = 0; i < 8; ++i) yd.push_back(static_cast<int>(ir.next_below(3)));
    absorb(gradient_oracle(m, xd, yd));
  }

  r.passed = ste_err < 1e-6 && dense_err < 1e-5;
  r.detail = "max STE rel err " + fmt(ste_err) + " (tol 1e-6), max dense-vs-FD rel err " +
             fmt(dense_err) + " (tol 1e-5)";
  r.data = {{"max_ste_rel_err", ste_err},
            {"max_dense_rel_err", dense_err},
            {"worst_ste_tensor", worst_ste},
            {"worst_dense_tensor", worst_dense}};
  return r;
}

namespace {

SuiteResult theorem_suite(uint64_t seed, bool general) {
  SuiteResult r;
  r.name = general ? "theorem1_general" : "theorem1";

  // Constructed instance (single-swap form only).
  ConstructedSwapResult constructed;
  if (!general) constructed = construct_single_swap<double>(seed);

  auto harvest_at = [&](double lr, int64_t steps) {
    auto fx = make_mlp_fixture(seed + 2, 4, 10, 16, 1.6, 0.5);
    TheoremCheckOptions opt;
    opt.lr = lr;
    opt.steps = steps;
    opt.batch_size = 32;
    RngStream hr(seed + 3);
    return general ? theorem1_general(fx.model, fx.train, opt, hr)
                   : theorem1_single_swap(fx.model, fx.train, opt, hr);
  };
  SwapCheckReport fine = harvest_at(1e-5, 60000);
  SwapCheckReport coarse = harvest_at(1e-4, 20000);

  bool conservation = true;
  for (const auto& ev : fine.events) {
    conservation = conservation && ev.entered.size() == ev.exited.size();
  }
  for (const auto& ev : coarse.events) {
    conservation = conservation && ev.entered.size() == ev.exited.size();
  }

  const bool constructed_ok = general || constructed.success;
  const bool fine_ok = fine.conclusive() && fine.pass_fraction() >= 0.99;
  const bool coarse_ok = coarse.conclusive() && coarse.pass_fraction() >= 0.95;
  r.passed = constructed_ok && fine_ok && coarse_ok && conservation;

  std::ostringstream os;
  if (!general) {
    os << "constructed: " << (constructed.success ? "decrease" : "NO DECREASE") << " after "
       << constructed.halvings << " halvings; ";
  }
  os << "lr 1e-5: " << fine.decreased << "/" << fine.events.size() << " non-increasing ("
     << fmt(100.0 * fine.pass_fraction()) << "%, need 99%); lr 1e-4: " << coarse.decreased << "/"
     << coarse.events.size() << " (" << fmt(100.0 * coarse.pass_fraction()) << "%, need 95%)";
  r.detail = os.str();
  r.data = {{"fine_events", fine.events.size()},
            {"fine_pass_fraction", fine.pass_fraction()},
            {"fine_swap_steps", fine.swap_steps_seen},
            {"coarse_events", coarse.events.size()},
            {"coarse_pass_fraction", coarse.pass_fraction()},
            {"edge_count_conserved", conservation}};
  if (!general) {
    r.data["constructed_success"] = constructed.success;
    r.data["constructed_halvings"] = constructed.halvings;
    r.data["constructed_loss_before"] = constructed.loss_before;
    r.data["constructed_loss_after"] = constructed.loss_after;
  }
  return r;
}

}  // namespace

SuiteResult verify_theorem1(uint64_t seed) { return theorem_suite(seed, false); }

SuiteResult verify_theorem1_general(uint64_t seed) { return theorem_suite(seed, true); }

SuiteResult verify_bruteforce(uint64_t seed) {
  SuiteResult r;
  r.name = "bruteforce";
  RngStream rng(seed);
  auto [train, test] = synth_blobs<double>(3, 6, 80, 0.8, rng.fork("data"));
  (void)test;

  // Single masked linear layer: 18 edges, keep 9 -> C(18,9) = 48620 masks.
  Model<double> model;
  {
    RngStream wr = rng.fork("w");
    Tensor<double> w = signed_kaiming_constant<double>({3, 6}, 6, wr);
    RngStream sr = rng.fork("s");
    Tensor<double> s = score_init<double>({3, 6}, 6, sr);
    model.add(std::make_unique<MaskedLinear<double>>("fc", std::move(w), std::move(s), 0.5, false));
    model.set_meta(Algorithm::EdgePopup, 0.5, {6});
  }

  BruteForceResult bf = brute_force_subnets(model, train, 0.5);
  const BigInt expect_count = subnetwork_count(18, 0.5);
  const bool count_ok = BigInt(bf.enumerated_count) == expect_count;
  const bool spread_ok = bf.max_loss > bf.min_loss;

  // Edge-popup on the same instance: full-batch SGD on the scores.
  {
    std::vector<int32_t> idx(static_cast<size_t>(train.size()));
    std::iota(idx.begin(), idx.end(), 0);
    auto [x, y] = gather(train, idx);
    auto* fc = dynamic_cast<MaskedLinear<double>*>(model.selectable()[0]);
    Tensor<double> vel;
    const SgdOptions sgd{0.05, 0.9, 0.0};
    for (int stepi = 0; stepi < 400; ++stepi) {
      Tensor<double> logits = model.forward(x, true);
      auto xent = kernels::softmax_xent(logits, y);
      model.zero_grad();
      model.backward(kernels::softmax_xent_backward(xent.probs, y));
      sgd_update(fc->scores(), fc->score_grad(), vel, sgd);
    }
  }
  const double trained_loss = evaluate_dataset(model, train).first;
  const bool beats_median = trained_loss <= bf.median_loss;
  const bool near_optimum = trained_loss <= bf.best_loss * 1.05;

  r.passed = count_ok && spread_ok && beats_median && near_optimum;
  r.detail = "enumerated " + std::to_string(bf.enumerated_count) + " masks (expected " +
             expect_count.str() + "); popup loss " + fmt(trained_loss) + " vs optimum " +
             fmt(bf.best_loss) + " / median " + fmt(bf.median_loss);
  r.data = {{"enumerated", bf.enumerated_count},
            {"best_loss", bf.best_loss},
            {"median_loss", bf.median_loss},
            {"max_loss", bf.max_loss},
            {"trained_loss", trained_loss},
            {"count_matches_formula", count_ok},
            {"beats_median", beats_median},
            {"within_5pct_of_optimum", near_optimum}};
  return r;
}

SuiteResult verify_variance(uint64_t seed) {
  SuiteResult r;
  r.name = "variance";
  RngStream rng(seed);
  const int64_t fan_in = 1024, out = 64, batch = 32, trials = 100;

  auto layer_output_variance = [&](double k, bool scaled, uint64_t trial) {
    RngStream tr = rng.fork("trial" + std::to_string(trial) + "_k" + fmt(k) +
                            (scaled ? "_scaled" : "_plain"));
    InitSpec spec{InitKind::KaimingNormal, scaled, k};
    RngStream wr = tr.fork("weights");
    Tensor<double> w = init_weights<double>(spec, {out, fan_in}, fan_in, wr);
    RngStream sr = tr.fork("scores");  // independent of the weight stream
    Tensor<double> s = score_init<double>({out, fan_in}, fan_in, sr);
    MaskedLinear<double> layer("probe", std::move(w), std::move(s), k, false);
    RngStream xr = tr.fork("input");
    Tensor<double> x({batch, fan_in});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = xr.normal();
    Tensor<double> y = layer.forward(x, false);
    double mean = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) mean += y[i];
    mean /= static_cast<double>(y.numel());
    double var = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) var += (y[i] - mean) * (y[i] - mean);
    return var / static_cast<double>(y.numel());
  };

  auto trial_mean = [&](double k, bool scaled) {
    double acc = 0.0;
    for (int64_t t = 0; t < trials; ++t) {
      acc += layer_output_variance(k, scaled, static_cast<uint64_t>(t));
    }
    return acc / static_cast<double>(trials);
  };

  const double dense_var = trial_mean(1.0, false);
  bool ok = true;
  nlohmann::json points = nlohmann::json::array();
  std::ostringstream os;
  os << "dense var " << fmt(dense_var);
  for (double k : {0.3, 0.5}) {
    const double scaled_var = trial_mean(k, true);
    const double plain_var = trial_mean(k, false);
    const bool scaled_ok = std::abs(scaled_var - dense_var) <= 0.10 * dense_var;
    const bool plain_ok = std::abs(plain_var - k * dense_var) <= 0.15 * k * dense_var;
    ok = ok && scaled_ok && plain_ok;
    points.push_back({{"k", k},
                      {"scaled_var", scaled_var},
                      {"plain_var", plain_var},
                      {"scaled_within_10pct", scaled_ok},
                      {"plain_within_15pct_of_k_times_dense", plain_ok}});
    os << "; k=" << fmt(k) << ": scaled " << fmt(scaled_var) << (scaled_ok ? " ok" : " FAIL")
       << ", unscaled " << fmt(plain_var) << " vs " << fmt(k * dense_var)
       << (plain_ok ? " ok" : " FAIL");
  }
  r.passed = ok;
  r.detail = os.str();
  r.data = {{"dense_var", dense_var}, {"points", points}};
  return r;
}

SuiteResult run_verify_suite(const std::string& name) {
  if (name == "topk") return verify_topk();
  if (name == "gradients") return verify_gradients();
  if (name == "theorem1") return verify_theorem1();
  if (name == "theorem1_general") return verify_theorem1_general();
  if (name == "bruteforce") return verify_bruteforce();
  if (name == "variance") return verify_variance();
  throw ConfigError("unknown verify suite '" + name + "' (have: topk, gradients, theorem1, "
                    "theorem1_general, bruteforce, variance)");
}

std::vector<std::string> verify_suite_names() {
  return {"topk", "gradients", "theorem1", "theorem1_general", "bruteforce", "variance"};
}

}  // namespace edgepop
