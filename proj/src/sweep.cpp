#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "edgepop/train.hpp"

namespace edgepop {

namespace {

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
};

Stats mean_std(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double acc = 0.0;
    for (double x : v) acc += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(v.size() - 1));
  }
  return s;
}

double parse_keep_value(const std::string& v) {
  double k = std::stod(v);
  if (k > 1.0) k /= 100.0;
  check_keep_fraction(k);
  return k;
}

struct Task {
  size_t point = 0;
  bool dense = false;
  TrainConfig cfg;
};

}  // namespace

std::vector<int64_t> layer_weight_counts(const ArchSpec& arch,
                                         const std::vector<int64_t>& input_shape) {
  std::vector<int64_t> out;
  const Rational& m = arch.width_multiplier;
  const int64_t fc = scale_width(256, m);
  if (arch.name == ArchName::Mlp) {
    int64_t d = 1;
    for (int64_t e : input_shape) d *= e;
    out.push_back(d * fc);
    out.push_back(fc * fc);
    out.push_back(fc * arch.classes);
    return out;
  }
  if (input_shape.size() != 3) throw ParamError("conv architectures need [C,H,W] input");
  int64_t ch = input_shape[0], H = input_shape[1], W = input_shape[2];
  const auto plan = conv_plan(arch.name);
  for (size_t i = 0; i < plan.size(); ++i) {
    const int64_t oc = scale_width(plan[i], m);
    out.push_back(oc * ch * 9);
    ch = oc;
    if (i % 2 == 1) {
      H /= 2;
      W /= 2;
    }
  }
  out.push_back(ch * H * W * fc);
  out.push_back(fc * fc);
  out.push_back(fc * arch.classes);
  return out;
}

std::optional<double> solve_k_for_subnet_size(const std::vector<int64_t>& layer_sizes,
                                              int64_t target) {
  auto size_at = [&](double k) {
    int64_t e = 0;
    for (int64_t n : layer_sizes) e += keep_count(n, k);
    return e;
  };
  int64_t total = 0, minimum = 0;
  for (int64_t n : layer_sizes) total += n;
  const double kmin = 1e-12;
  minimum = size_at(kmin);
  if (target > total || target < minimum) return std::nullopt;
  double lo = kmin, hi = 1.0;
  // |E|(k) is a nondecreasing step function; bisect to the crossing point.
  for (int iter = 0; iter < 200 && hi - lo > 1e-15; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (size_at(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (size_at(hi) != target) return std::nullopt;  // two layers jump at once
  return hi;
}

std::vector<SweepPointResult> run_sweep(const TrainConfig& base, int64_t workers) {
  const auto& sw = base.sweep;
  if (sw.axis.empty()) throw ConfigError("sweep requires a [sweep] section with an axis");
  const bool known = sw.axis == "k" || sw.axis == "width" || sw.axis == "fixed_params" ||
                     sw.axis == "init" || sw.axis == "algorithm" || sw.axis == "seed";
  if (!known) throw ConfigError("unknown sweep axis '" + sw.axis + "'");
  if (sw.values.empty()) throw ConfigError("sweep.values is empty");
  if (sw.seeds_per_point < 1) throw ConfigError("sweep.seeds_per_point must be >= 1");

  std::vector<SweepPointResult> points(sw.values.size());
  std::vector<Task> tasks;

  const int64_t base_target = [&] {
    auto sizes = layer_weight_counts(base.arch, model_input_shape(base));
    int64_t e = 0;
    for (int64_t n : sizes) e += keep_count(n, base.k);
    return e;
  }();

  for (size_t p = 0; p < sw.values.size(); ++p) {
    const std::string& value = sw.values[p];
    SweepPointResult& pt = points[p];
    pt.axis = sw.axis;
    pt.value = value;
    pt.k_used = base.k;

    TrainConfig cfg = base;
    cfg.sweep = SweepConfig{};
    bool dense_baseline = false;
    try {
      if (sw.axis == "k") {
        cfg.k = parse_keep_value(value);
        pt.k_used = cfg.k;
      } else if (sw.axis == "width") {
        cfg.arch.width_multiplier = parse_rational(value);
        dense_baseline = true;
      } else if (sw.axis == "fixed_params") {
        cfg.arch.width_multiplier = parse_rational(value);
        auto sizes = layer_weight_counts(cfg.arch, model_input_shape(cfg));
        auto k = solve_k_for_subnet_size(sizes, base_target);
        if (!k) {
          pt.status = "skipped: no k holds |E| = " + std::to_string(base_target);
          continue;
        }
        cfg.k = *k;
        pt.k_used = cfg.k;
      } else if (sw.axis == "init") {
        cfg.init.kind = parse_init_kind(value);
      } else if (sw.axis == "algorithm") {
        cfg.algorithm = parse_algorithm(value);
      } else if (sw.axis == "seed") {
        cfg.seed = static_cast<uint64_t>(std::stoll(value));
      }
    } catch (const std::exception& e) {
      pt.status = std::string("skipped: ") + e.what();
      continue;
    }
    if (cfg.init.scaled) cfg.init.k = cfg.k;

    const int64_t seeds = sw.axis == "seed" ? 1 : sw.seeds_per_point;
    for (int64_t s = 0; s < seeds; ++s) {
      TrainConfig run = cfg;
      if (sw.axis != "seed") run.seed = cfg.seed + static_cast<uint64_t>(s);
      tasks.push_back({p, false, run});
      if (dense_baseline) {
        TrainConfig dense = run;
        dense.algorithm = Algorithm::DenseSgd;
        dense.optimizer.lr = sw.dense_lr;
        tasks.push_back({p, true, dense});
      }
    }
  }

  struct Outcome {
    double acc = 0.0, loss = 0.0;
    int64_t subnet = 0;
    bool dense = false;
    size_t point = 0;
    bool ok = false;
    std::string error;
  };
  std::vector<Outcome> outcomes(tasks.size());

  std::atomic<size_t> next{0};
  const int64_t nworkers = std::max<int64_t>(1, workers);
  auto worker = [&]() {
#ifdef _OPENMP
    if (nworkers > 1) omp_set_num_threads(1);  // grid points are the parallel axis
#endif
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) break;
      Outcome& o = outcomes[i];
      o.point = tasks[i].point;
      o.dense = tasks[i].dense;
      try {
        RunOptions ro;
        ro.write_artifacts = false;
        ro.verbose = false;
        ro.count_swaps = false;
        RunResult r = run_training(tasks[i].cfg, ro);
        o.acc = r.final_test_acc;
        o.loss = r.final_test_loss;
        o.subnet = r.subnet_size;
        o.ok = true;
      } catch (const std::exception& e) {
        o.error = e.what();
      }
    }
  };
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int64_t w = 0; w < nworkers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (size_t p = 0; p < points.size(); ++p) {
    if (points[p].status != "ok") continue;
    std::vector<double> accs, losses, dense_accs;
    int64_t subnet = 0;
    std::string err;
    for (size_t i = 0; i < tasks.size(); ++i) {
      if (outcomes[i].point != p) continue;
      if (!outcomes[i].ok) {
        err = outcomes[i].error;
        continue;
      }
      if (outcomes[i].dense) {
        dense_accs.push_back(outcomes[i].acc);
      } else {
        accs.push_back(outcomes[i].acc);
        losses.push_back(outcomes[i].loss);
        subnet = outcomes[i].subnet;
      }
    }
    if (accs.empty()) {
      points[p].status = "skipped: " + (err.empty() ? std::string("no runs") : err);
      continue;
    }
    const Stats a = mean_std(accs), l = mean_std(losses);
    points[p].n_seeds = static_cast<int64_t>(accs.size());
    points[p].acc_mean = a.mean;
    points[p].acc_std = a.stddev;
    points[p].loss_mean = l.mean;
    points[p].loss_std = l.stddev;
    points[p].subnet_size = subnet;
    if (!dense_accs.empty()) {
      const Stats d = mean_std(dense_accs);
      points[p].has_dense = true;
      points[p].dense_acc_mean = d.mean;
      points[p].dense_acc_std = d.stddev;
    }
  }
  return points;
}

void write_sweep_csv(const std::vector<SweepPointResult>& points,
                     const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "axis,value,k,seeds,acc_mean,acc_std,loss_mean,loss_std,subnet_size,"
         "dense_acc_mean,dense_acc_std,gap,status\n";
  char buf[512];
  for (const auto& p : points) {
    if (p.has_dense) {
      std::snprintf(buf, sizeof(buf),
                    "%s,%s,%.9g,%lld,%.9g,%.9g,%.9g,%.9g,%lld,%.9g,%.9g,%.9g,%s\n",
                    p.axis.c_str(), p.value.c_str(), p.k_used,
                    static_cast<long long>(p.n_seeds), p.acc_mean, p.acc_std, p.loss_mean,
                    p.loss_std, static_cast<long long>(p.subnet_size), p.dense_acc_mean,
                    p.dense_acc_std, p.dense_acc_mean - p.acc_mean, p.status.c_str());
    } else {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%lld,%.9g,%.9g,%.9g,%.9g,%lld,,,,%s\n",
                    p.axis.c_str(), p.value.c_str(), p.k_used,
                    static_cast<long long>(p.n_seeds), p.acc_mean, p.acc_std, p.loss_mean,
                    p.loss_std, static_cast<long long>(p.subnet_size), p.status.c_str());
    }
    out << buf;
  }
}

}  // namespace edgepop
