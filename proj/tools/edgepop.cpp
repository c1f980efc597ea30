#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "edgepop/suites.hpp"
#include "edgepop/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAssertion = 1;  // assertion / verification failure
constexpr int kExitConfig = 2;     // config / format error

void apply_workers(int64_t workers) {
#ifdef _OPENMP
  if (workers > 0) omp_set_num_threads(static_cast<int>(workers));
#else
  (void)workers;
#endif
}

edgepop::TrainConfig load_cfg(const std::string& path, int64_t seed_override,
                              const std::string& out_override) {
  edgepop::TrainConfig cfg = edgepop::load_config_file(path);
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  if (!out_override.empty()) cfg.out_dir = out_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subnetwork search in randomly weighted neural networks"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, suite_name;
  int64_t seed = -1, workers = 0;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "config file (key = value with sections)");
    if (needs_config) c->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--workers", workers, "worker count (0 = all hardware threads)");
  };

  CLI::App* train = app.add_subcommand("train", "train one run from a config");
  add_common(train, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
  eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--workers", workers, "worker count");

  CLI::App* sweep = app.add_subcommand("sweep", "run the [sweep] grid of a config");
  add_common(sweep, true);

  CLI::App* verify = app.add_subcommand("verify", "run a verification suite");
  verify->add_option("suite", suite_name, "one of: topk, gradients, theorem1, theorem1_general, "
                                          "bruteforce, variance")
      ->required();
  verify->add_option("--workers", workers, "worker count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      apply_workers(workers);
      edgepop::TrainConfig cfg = load_cfg(config_path, seed, out_dir);
      edgepop::RunResult r = edgepop::run_training(cfg);
      std::printf("final test accuracy %.4f (|E| %lld of %lld weights, k %.4g)\n",
                  r.final_test_acc, static_cast<long long>(r.subnet_size),
                  static_cast<long long>(r.total_weights), cfg.k);
      return kExitOk;
    }
    if (*eval) {
      apply_workers(workers);
      edgepop::EvalResult r = edgepop::run_eval(checkpoint_path);
      std::printf("accuracy %.4f  loss %.4f  |E| %lld  k %.4g\n", r.accuracy, r.loss,
                  static_cast<long long>(r.subnet_size), r.k);
      return kExitOk;
    }
    if (*sweep) {
      edgepop::TrainConfig cfg = load_cfg(config_path, seed, out_dir);
      const int64_t nworkers = workers > 0 ? workers : 1;
      auto points = edgepop::run_sweep(cfg, nworkers);
      const auto csv = std::filesystem::path(cfg.out_dir) / "sweep.csv";
      edgepop::write_sweep_csv(points, csv);
      for (const auto& p : points) {
        if (p.status == "ok") {
          std::printf("%s=%s  acc %.4f +- %.4f  |E| %lld%s\n", p.axis.c_str(), p.value.c_str(),
                      p.acc_mean, p.acc_std, static_cast<long long>(p.subnet_size),
                      p.has_dense ? ("  dense " + std::to_string(p.dense_acc_mean)).c_str() : "");
        } else {
          std::printf("%s=%s  %s\n", p.axis.c_str(), p.value.c_str(), p.status.c_str());
        }
      }
      std::printf("wrote %s\n", csv.string().c_str());
      return kExitOk;
    }
    if (*verify) {
      apply_workers(workers);
      edgepop::SuiteResult r = edgepop::run_verify_suite(suite_name);
      std::printf("[%s] %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
      nlohmann::json summary = {{"suite", r.name}, {"passed", r.passed}, {"data", r.data}};
      std::printf("%s\n", summary.dump().c_str());
      return r.passed ? kExitOk : kExitAssertion;
    }
  } catch (const edgepop::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const edgepop::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitAssertion;
  }
  return kExitOk;
}
