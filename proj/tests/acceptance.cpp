// Acceptance suite: one pass/fail line per criterion. Criterion 9 (the full
// CIFAR-10 run) is a long-running optional gate: it needs the CIFAR-10 binary
// files plus EDGEPOP_RUN_CIFAR=1 and is reported as SKIP otherwise.

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "edgepop/suites.hpp"
#include "edgepop/train.hpp"
#include "edgepop/verify.hpp"

using namespace edgepop;

namespace {

int g_failures = 0;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int criterion, bool pass, const std::string& detail, double seconds) {
  std::printf("[%s] criterion %d: %s (%.1fs)\n", pass ? "PASS" : "FAIL", criterion,
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void report_skip(int criterion, const std::string& why) {
  std::printf("[SKIP] criterion %d: %s\n", criterion, why.c_str());
  std::fflush(stdout);
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const size_t n = xs.size();
  auto ranks = [&](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (size_t i = 0; i < v.size(); ++i) {
      double rank = 1.0;
      for (size_t j = 0; j < v.size(); ++j) {
        if (v[j] < v[i]) rank += 1.0;
        if (j < i && v[j] == v[i]) rank += 1.0;  // average-free tie handling: stable order
      }
      r[i] = rank;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  double d2 = 0.0;
  for (size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (static_cast<double>(n) * (static_cast<double>(n * n) - 1.0));
}

TrainConfig desk_config() {
  TrainConfig cfg;
  cfg.algorithm = Algorithm::EdgePopup;
  cfg.arch = ArchSpec{ArchName::Mlp, Rational{1, 1}, 10};  // width 256
  cfg.init = InitSpec{InitKind::SignedKaimingConstant, false, 1.0};
  cfg.k = 0.5;
  cfg.optimizer = OptimizerConfig{OptimizerKind::Sgd, 0.1, 0.9, 1e-4, true};
  cfg.epochs = 50;
  cfg.seed = 1;
  cfg.dataset.kind = "blobs";
  cfg.dataset.batch_size = 128;
  cfg.dataset.blob_classes = 10;
  cfg.dataset.blob_dim = 64;
  cfg.dataset.blob_per_class = 200;
  cfg.dataset.blob_spread = 1.0;
  return cfg;
}

// Harder task for the trend criteria: wide class overlap so accuracy stays
// interior and width matters.
TrainConfig trend_config() {
  TrainConfig cfg = desk_config();
  cfg.arch.width_multiplier = Rational{1, 4};  // width 64 base for the k sweep
  cfg.epochs = 25;
  cfg.dataset.blob_dim = 24;
  cfg.dataset.blob_per_class = 100;
  cfg.dataset.blob_spread = 3.0;
  return cfg;
}

RunOptions quiet_run() {
  RunOptions o;
  o.verbose = false;
  o.write_artifacts = false;
  return o;
}

void criterion_1() {
  Timer t;
  SuiteResult r = verify_topk();
  report(1, r.passed, r.detail, t.seconds());
}

void criterion_2() {
  Timer t;
  SuiteResult r = verify_gradients();
  report(2, r.passed, r.detail, t.seconds());
}

void criterion_3() {
  Timer t;
  SuiteResult single = verify_theorem1();
  SuiteResult general = verify_theorem1_general();
  report(3, single.passed && general.passed,
         "single-swap {" + single.detail + "} multi-swap {" + general.detail + "}", t.seconds());
}

void criterion_4() {
  Timer t;
  RngStream rng(404);
  bool pass = true;
  for (int trial = 0; trial < 20 && pass; ++trial) {
    const int64_t C = 3 + static_cast<int64_t>(rng.next_below(6));
    const int64_t O = 2 + static_cast<int64_t>(rng.next_below(5));
    const int64_t N = 1 + static_cast<int64_t>(rng.next_below(4));
    Tensor<double> w({O, C, 1, 1});
    Tensor<double> s({O, C, 1, 1});
    Tensor<double> x({N, C, 1, 1});
    for (int64_t i = 0; i < w.numel(); ++i) {
      w[i] = rng.normal();
      s[i] = rng.normal();
    }
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    const double k = 0.1 + 0.1 * static_cast<double>(rng.next_below(9));
    MaskedConv<double> conv("conv", w, s, k, 1, 0, false);
    MaskedLinear<double> lin("fc", w.reshaped({O, C}), s.reshaped({O, C}), k, false);
    auto yc = conv.forward(x, true);
    auto yl = lin.forward(x.reshaped({N, C}), true);
    for (int64_t i = 0; i < yc.numel(); ++i) pass = pass && yc[i] == yl[i];
  }
  report(4, pass, "unit-kernel masked conv on 1x1 maps equals masked linear, bit for bit",
         t.seconds());
}

void criterion_5() {
  Timer t;
  TrainConfig cfg = desk_config();
  cfg.epochs = 3;
  cfg.arch.width_multiplier = Rational{1, 8};  // quick, the contract is the point
  Model<float> fresh = build_model_for(cfg);
  const auto before = fresh.weight_hashes();
  Tensor<float> scores0 = fresh.selectable()[0]->selector();
  RunResult r = run_training(cfg, quiet_run());
  const auto after = r.model.weight_hashes();
  bool frozen = before.size() == after.size();
  for (size_t i = 0; frozen && i < before.size(); ++i) {
    frozen = before[i].second == after[i].second;
  }
  const bool scores_moved =
      r.model.selectable()[0]->selector().byte_hash() != scores0.byte_hash();
  report(5, frozen && scores_moved,
         std::string("every frozen weight tensor hashes to its initialized state") +
             (scores_moved ? "; scores differ" : "; scores DID NOT MOVE"),
         t.seconds());
}

void criterion_6() {
  Timer t;
  SuiteResult r = verify_variance();
  report(6, r.passed, r.detail, t.seconds());
}

void criterion_7() {
  Timer t;
  TrainConfig cfg = desk_config();
  RunResult r = run_training(cfg, quiet_run());
  double best_acc = 0.0;
  for (const auto& row : r.rows) best_acc = std::max(best_acc, row.test_acc);
  const bool reaches = best_acc >= 0.95;

  // final training loss vs 200 random masks of the same network
  auto [train, test] = load_datasets(cfg);
  (void)test;
  Dataset<double> train64{train.images.cast<double>(), train.labels, train.classes,
                          train.split,  train.channel_mean, train.channel_std};
  // mirror the trained model at double precision for mask evaluation
  Model<double> model64;
  {
    TrainConfig dcfg = cfg;
    RngStream root(dcfg.seed);
    RngStream mr = root.fork("model");
    model64 = build_model<double>(dcfg.arch, dcfg.k, dcfg.init, dcfg.algorithm,
                                  model_input_shape(dcfg), mr);
    auto dst = model64.selectable();
    auto src = r.model.selectable();
    for (size_t i = 0; i < dst.size(); ++i) {
      dst[i]->weights() = src[i]->weights().cast<double>();
      dst[i]->selector() = src[i]->selector().cast<double>();
    }
  }
  const double trained_loss = evaluate_dataset(model64, train64).first;
  RngStream mask_rng(777);
  auto rnd = random_mask_losses(model64, train64, 200, mask_rng);
  std::sort(rnd.begin(), rnd.end());
  const double median = rnd[rnd.size() / 2];
  const bool beats_median = trained_loss <= median;

  SuiteResult micro = verify_bruteforce();

  report(7, reaches && beats_median && micro.passed,
         "best test acc " + std::to_string(best_acc) + " (need 0.95); train loss " +
             std::to_string(trained_loss) + " vs random-mask median " + std::to_string(median) +
             "; micro-instance {" + micro.detail + "}",
         t.seconds());
}

void criterion_8() {
  Timer t;
  TrainConfig base = trend_config();
  const std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};

  auto mean_acc = [&](TrainConfig cfg) {
    double acc = 0.0;
    for (uint64_t s : seeds) {
      cfg.seed = s;
      acc += run_training(cfg, quiet_run()).final_test_acc;
    }
    return acc / static_cast<double>(seeds.size());
  };

  // k sweep: interior peak
  double acc_k01 = 0.0, acc_k05 = 0.0, acc_k09 = 0.0;
  {
    TrainConfig cfg = base;
    cfg.k = 0.1;
    acc_k01 = mean_acc(cfg);
    cfg.k = 0.5;
    acc_k05 = mean_acc(cfg);
    cfg.k = 0.9;
    acc_k09 = mean_acc(cfg);
  }
  const bool k_trend = acc_k05 >= acc_k01 && acc_k05 >= acc_k09;

  // width sweep: dense-vs-subnetwork gap shrinks with the multiplier
  const std::vector<Rational> mults = {{1, 8}, {1, 4}, {1, 2}, {1, 1}};
  std::vector<double> mult_vals, gaps;
  for (const auto& m : mults) {
    TrainConfig cfg = base;
    cfg.arch.width_multiplier = m;
    const double popup = mean_acc(cfg);
    TrainConfig dense = cfg;
    dense.algorithm = Algorithm::DenseSgd;
    dense.optimizer.lr = 0.01;
    const double dense_acc = mean_acc(dense);
    mult_vals.push_back(m.value());
    gaps.push_back(dense_acc - popup);
  }
  const double rho = spearman(mult_vals, gaps);
  const bool width_trend = rho < 0.0;

  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "k sweep mean acc over 5 seeds: k=0.1 %.3f, k=0.5 %.3f, k=0.9 %.3f (interior "
                "peak %s); width sweep gaps %.3f/%.3f/%.3f/%.3f, Spearman %.2f (need < 0)",
                acc_k01, acc_k05, acc_k09, k_trend ? "ok" : "VIOLATED", gaps[0], gaps[1], gaps[2],
                gaps[3], rho);
  report(8, k_trend && width_trend, buf, t.seconds());
}

void criterion_9() {
  const char* run_flag = std::getenv("EDGEPOP_RUN_CIFAR");
  DatasetConfig probe;
  const std::string dir = resolve_data_dir(probe);
  const bool have_data =
      !dir.empty() && std::filesystem::exists(std::filesystem::path(dir) / "data_batch_1.bin");
  if (!run_flag || std::string(run_flag) != "1") {
    report_skip(9, "long-running optional gate; set EDGEPOP_RUN_CIFAR=1 (and EDGEPOP_DATA_DIR) "
                   "to run the full CIFAR-10 comparison");
    return;
  }
  if (!have_data) {
    report_skip(9, "CIFAR-10 binaries not found under EDGEPOP_DATA_DIR");
    return;
  }
  Timer t;
  std::printf("criterion 9 hardware: %u threads\n", std::thread::hardware_concurrency());

  TrainConfig cfg;
  cfg.algorithm = Algorithm::EdgePopup;
  cfg.arch = ArchSpec{ArchName::Conv2, Rational{1, 1}, 10};
  cfg.init = InitSpec{InitKind::SignedKaimingConstant, false, 1.0};
  cfg.k = 0.5;
  cfg.optimizer = OptimizerConfig{OptimizerKind::Sgd, 0.1, 0.9, 1e-4, true};
  cfg.epochs = 100;
  cfg.seed = 1;
  cfg.dataset.kind = "cifar10";
  cfg.dataset.batch_size = 128;
  cfg.out_dir = "runs/acceptance_cifar_popup";
  RunOptions opts;
  opts.verbose = true;
  RunResult popup = run_training(cfg, opts);

  TrainConfig zhou = cfg;
  zhou.algorithm = Algorithm::Zhou;
  zhou.optimizer.lr = 200.0;
  zhou.out_dir = "runs/acceptance_cifar_zhou";
  RunResult zres = run_training(zhou, opts);

  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "edge-popup last-epoch test acc %.4f (need >= 0.64), zhou baseline %.4f "
                "(need popup >= zhou + 0.02); wall %.0fs + %.0fs",
                popup.final_test_acc, zres.final_test_acc, popup.wall_seconds,
                zres.wall_seconds);
  report(9, popup.final_test_acc >= 0.64 && popup.final_test_acc >= zres.final_test_acc + 0.02,
         buf, t.seconds());
}

}  // namespace

int main() {
  std::printf("acceptance suite (%u hardware threads)\n", std::thread::hardware_concurrency());
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
