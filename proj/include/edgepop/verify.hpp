#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "edgepop/data.hpp"
#include "edgepop/graph.hpp"
#include "edgepop/model.hpp"
#include "edgepop/optim.hpp"
#include "edgepop/popup.hpp"

namespace edgepop {

using BigInt = boost::multiprecision::cpp_int;

// C(n, keep_count(n,k)) with exact big-integer arithmetic.
inline BigInt binomial(int64_t n, int64_t r) {
  if (r < 0 || r > n) return 0;
  r = std::min(r, n - r);
  BigInt out = 1;
  for (int64_t i = 1; i <= r; ++i) {
    out *= (n - r + i);
    out /= i;  // exact at every step
  }
  return out;
}

inline BigInt subnetwork_count(int64_t n, double k) {
  if (n < 0) throw ParamError("subnetwork_count needs n >= 0");
  if (n == 0) return 1;
  return binomial(n, keep_count(n, k));
}

// ---------- mini-batch evaluation helpers ----------

template <typename T>
std::pair<double, double> evaluate_batch(Model<T>& model, const Tensor<T>& x,
                                         const std::vector<int>& labels, bool training) {
  Tensor<T> logits = model.forward(x, training);
  auto r = kernels::softmax_xent(logits, labels);
  int64_t correct = 0;
  const int64_t N = logits.dim(0), K = logits.dim(1);
  for (int64_t i = 0; i < N; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < K; ++j)
      if (logits[i * K + j] > logits[i * K + best]) best = j;
    correct += (best == labels[static_cast<size_t>(i)]) ? 1 : 0;
  }
  return {static_cast<double>(r.loss), static_cast<double>(correct) / static_cast<double>(N)};
}

template <typename T>
std::pair<double, double> evaluate_dataset(Model<T>& model, const Dataset<T>& ds,
                                           int64_t batch_size = 256) {
  double loss_sum = 0.0;
  int64_t correct = 0;
  const int64_t n = ds.size();
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    std::vector<int32_t> idx;
    for (int64_t i = start; i < end; ++i) idx.push_back(static_cast<int32_t>(i));
    auto [x, y] = gather(ds, idx);
    Tensor<T> logits = model.forward(x, false);
    auto r = kernels::softmax_xent(logits, y);
    loss_sum += static_cast<double>(r.loss) * static_cast<double>(end - start);
    const int64_t K = logits.dim(1);
    for (int64_t i = 0; i < end - start; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < K; ++j)
        if (logits[i * K + j] > logits[i * K + best]) best = j;
      correct += (best == y[static_cast<size_t>(i)]) ? 1 : 0;
    }
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

// ---------- Swap-theorem checks ----------

struct SwapCheckReport {
  std::vector<SwapEvent> events;  // qualifying events only
  int64_t decreased = 0;
  int64_t violated = 0;
  int64_t steps_run = 0;
  int64_t swap_steps_seen = 0;  // steps with any swap anywhere, qualifying or not
  double lr = 0.0;
  double tolerance = 0.0;

  bool conclusive() const { return !events.empty(); }
  double pass_fraction() const {
    return events.empty() ? 0.0
                          : static_cast<double>(decreased) / static_cast<double>(events.size());
  }
};

struct TheoremCheckOptions {
  double lr = 1e-5;
  int64_t steps = 500;
  int64_t batch_size = 32;
  double tolerance = 0.0;  // slack added to loss_before when judging non-increase
};

namespace detail {

// One swap, both edges into the same receiving node, confined to one layer.
template <typename T>
bool single_swap_same_receiver(const std::vector<std::optional<SwapEvent>>& evs,
                               const std::vector<SelectableLayer<T>*>& layers, size_t* which) {
  size_t active = 0, idx = 0;
  for (size_t i = 0; i < evs.size(); ++i) {
    if (evs[i]) {
      ++active;
      idx = i;
    }
  }
  if (active != 1) return false;
  const SwapEvent& e = *evs[idx];
  if (e.entered.size() != 1 || e.exited.size() != 1) return false;
  if (layers[idx]->receiver_of(e.entered[0]) != layers[idx]->receiver_of(e.exited[0])) return false;
  *which = idx;
  return true;
}

template <typename T>
bool any_swap_one_layer(const std::vector<std::optional<SwapEvent>>& evs,
                        const std::vector<SelectableLayer<T>*>&, size_t* which) {
  size_t active = 0, idx = 0;
  for (size_t i = 0; i < evs.size(); ++i) {
    if (evs[i]) {
      ++active;
      idx = i;
    }
  }
  if (active != 1) return false;
  *which = idx;
  return true;
}

}  // namespace detail

// Trains the model with plain SGD on the scores (no momentum, no weight
// decay: the theorem's setting) and, for every step whose qualifying swap
// pattern holds, re-evaluates the same mini-batch with the post-step masks
// and the weights untouched.
template <typename T, typename Qualifier>
SwapCheckReport harvest_swap_events(Model<T>& model, const Dataset<T>& data,
                                    const TheoremCheckOptions& opt, const RngStream& shuffle_rng,
                                    Qualifier qualifies) {
  SwapCheckReport report;
  report.lr = opt.lr;
  report.tolerance = opt.tolerance;
  auto layers = model.selectable();
  auto slots = model.trainable_slots();
  std::vector<Tensor<T>> velocity(slots.size());
  const SgdOptions sgd{opt.lr, 0.0, 0.0};

  BatchPlan plan{std::min<int64_t>(opt.batch_size, data.size()), shuffle_rng.fork("theorem"),
                 false};
  int64_t step = 0, epoch = 0;
  while (step < opt.steps) {
    for (const auto& batch : batches(data, plan, epoch)) {
      if (step >= opt.steps) break;
      auto [x, y] = gather(data, batch);

      std::vector<Tensor<T>> masks_before;
      for (auto* l : layers) masks_before.push_back(l->current_mask());

      Tensor<T> logits = model.forward(x, true);
      auto xent = kernels::softmax_xent(logits, y);
      const double loss_before = static_cast<double>(xent.loss);
      model.zero_grad();
      model.backward(kernels::softmax_xent_backward(xent.probs, y));
      for (size_t i = 0; i < slots.size(); ++i) {
        sgd_update(*slots[i].param, *slots[i].grad, velocity[i], sgd);
      }
      ++step;

      std::vector<std::optional<SwapEvent>> evs;
      bool any = false;
      for (size_t i = 0; i < layers.size(); ++i) {
        evs.push_back(detect_swaps(masks_before[i], layers[i]->current_mask(),
                                   layers[i]->name()));
        any = any || evs.back().has_value();
      }
      if (any) ++report.swap_steps_seen;
      size_t which = 0;
      if (!qualifies(evs, layers, &which)) continue;

      auto [loss_after, acc] = evaluate_batch(model, x, y, false);
      (void)acc;
      SwapEvent ev = *evs[which];
      ev.loss_before = loss_before;
      ev.loss_after = loss_after;
      if (loss_after <= loss_before + opt.tolerance) {
        ++report.decreased;
      } else {
        ++report.violated;
      }
      report.events.push_back(std::move(ev));
    }
    ++epoch;
  }
  report.steps_run = step;
  return report;
}

template <typename T>
SwapCheckReport theorem1_single_swap(Model<T>& model, const Dataset<T>& data,
                                     const TheoremCheckOptions& opt, const RngStream& rng) {
  return harvest_swap_events(model, data, opt, rng,
                             detail::single_swap_same_receiver<T>);
}

template <typename T>
SwapCheckReport theorem1_general(Model<T>& model, const Dataset<T>& data,
                                 const TheoremCheckOptions& opt, const RngStream& rng) {
  return harvest_swap_events(model, data, opt, rng, detail::any_swap_one_layer<T>);
}

// ---------- Constructed single-swap instance ----------

struct ConstructedSwapResult {
  bool success = false;
  bool swap_clean = false;  // the engineered swap happened and nothing else
  int halvings = 0;
  double lr = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::string layer;
  int64_t edge_in = -1;
  int64_t edge_out = -1;
  double first_order = 0.0;  // predicted Taylor change g_in - g_out (< 0)
};

// Builds a popup MLP on a small blobs batch and engineers score values so
// that one gradient step swaps exactly one (in,out) edge pair into the same
// receiving node, with the gradient-alignment inequality satisfied strictly.
// The loss on the same batch is then re-evaluated directly. On violation the
// construction is repeated at half the learning rate (fresh instance, fresh
// candidate) up to max_halvings times.
template <typename T>
ConstructedSwapResult construct_single_swap(uint64_t seed, double lr0 = 1e-3,
                                            int max_halvings = 20) {
  ConstructedSwapResult out;
  double lr = lr0;
  for (int attempt = 0; attempt <= max_halvings; ++attempt, lr /= 2) {
    RngStream rng(seed + static_cast<uint64_t>(attempt) * 7919);
    auto [train, test] = synth_blobs<T>(4, 12, 24, 1.0, rng.fork("data"));
    (void)test;
    ArchSpec arch{ArchName::Mlp, Rational{1, 16}, 4};  // width 16 MLP
    InitSpec init{InitKind::KaimingNormal, false, 1.0};
    RngStream mrng = rng.fork("model");
    Model<T> model = build_model<T>(arch, 0.5, init, Algorithm::EdgePopup, {12}, mrng);

    std::vector<int32_t> idx;
    for (int32_t i = 0; i < std::min<int64_t>(24, train.size()); ++i) idx.push_back(i);
    auto [x, y] = gather(train, idx);

    auto layers = model.selectable();

    // Re-assign every score to a positive, well-separated value that keeps
    // the initial masks intact. With all scores positive the sign chain is
    // the identity and the stored-score gradients are exactly the Eq-level
    // straight-through gradients the pair selection below reasons about.
    std::vector<Tensor<T>> masks_before;
    for (auto* l : layers) {
      auto* lin = dynamic_cast<MaskedLinear<T>*>(l);
      const Tensor<T> mask = lin->current_mask();
      masks_before.push_back(mask);
      Tensor<T>& s = lin->scores();
      for (int64_t i = 0; i < s.numel(); ++i) {
        // Spread values so no unintended pair can cross in one tiny step.
        const double jitter = 1e-3 * static_cast<double>(i % 97);
        s[i] = static_cast<T>(mask[i] != T{0} ? 2.0 + jitter : 0.5 + jitter);
      }
    }

    // Gradients under those masks.
    Tensor<T> logits = model.forward(x, true);
    auto xent = kernels::softmax_xent(logits, y);
    const double loss_before = static_cast<double>(xent.loss);
    model.zero_grad();
    model.backward(kernels::softmax_xent_backward(xent.probs, y));

    // Candidate (layer, out-edge i, in-edge j) sharing a receiver, with
    // g_i < g_j. Rank by first-order improvement minus a curvature surrogate.
    struct Candidate {
      size_t layer = 0;
      int64_t enter = -1, exit = -1;
      double margin = -std::numeric_limits<double>::infinity();
      double first_order = 0.0;
    };
    Candidate best;
    for (size_t li = 0; li < layers.size(); ++li) {
      auto* lin = dynamic_cast<MaskedLinear<T>*>(layers[li]);
      if (!lin) continue;
      const Tensor<T> mask = lin->current_mask();
      const Tensor<T>& g = lin->score_grad();
      const Tensor<T>& w = lin->weights();
      const int64_t in_w = w.dim(1), out_w = w.dim(0);
      // Layer input activations for the curvature surrogate.
      // fc1 sees x; deeper layers' inputs are not re-derived here, so the
      // surrogate search is restricted to fc1.
      if (lin->name() != "fc1") continue;
      const int64_t N = x.dim(0);
      for (int64_t row = 0; row < out_w; ++row) {
        for (int64_t a = 0; a < in_w; ++a) {
          const int64_t ea = row * in_w + a;
          if (mask[ea] != T{0}) continue;  // candidate entering edge
          for (int64_t b = 0; b < in_w; ++b) {
            const int64_t eb = row * in_w + b;
            if (mask[eb] == T{0}) continue;  // candidate exiting edge
            const double first = static_cast<double>(g[ea]) - static_cast<double>(g[eb]);
            if (first >= 0.0) continue;
            double d2 = 0.0;
            for (int64_t nidx = 0; nidx < N; ++nidx) {
              const double di = static_cast<double>(w[ea]) * static_cast<double>(x[nidx * in_w + a]) -
                                static_cast<double>(w[eb]) * static_cast<double>(x[nidx * in_w + b]);
              d2 += di * di;
            }
            d2 /= static_cast<double>(N);
            const double margin = -first - 0.5 * d2;
            if (margin > best.margin) {
              best = {li, ea, eb, margin, first};
            }
          }
        }
      }
    }
    if (best.enter < 0) continue;  // no aligned pair in this instance

    // Move the engineered pair next to the selection boundary with a gap
    // this lr's update just closes. The masks are unchanged (1.5 +- delta
    // sits strictly between the dropped and kept bands), so the gradients
    // computed above stay valid: the loss depends on the masks only.
    auto* target = dynamic_cast<MaskedLinear<T>*>(layers[best.layer]);
    const Tensor<T>& tg = target->score_grad();
    const double diff = static_cast<double>(tg[best.exit]) - static_cast<double>(tg[best.enter]);
    const double delta = lr * diff / 4.0;
    target->scores()[best.enter] = static_cast<T>(1.5 - delta);
    target->scores()[best.exit] = static_cast<T>(1.5 + delta);

    // The re-assignment must reproduce the masks the gradients were taken
    // under.
    bool masks_ok = true;
    for (size_t li = 0; li < layers.size() && masks_ok; ++li) {
      const Tensor<T> now = layers[li]->current_mask();
      for (int64_t i = 0; i < now.numel(); ++i) {
        if (now[i] != masks_before[li][i]) {
          masks_ok = false;
          break;
        }
      }
    }
    if (!masks_ok) continue;

    // One plain SGD step on the scores.
    const SgdOptions sgd{lr, 0.0, 0.0};
    std::vector<Tensor<T>> vel(layers.size());
    for (size_t li = 0; li < layers.size(); ++li) {
      auto* lin = dynamic_cast<MaskedLinear<T>*>(layers[li]);
      sgd_update(lin->scores(), lin->score_grad(), vel[li], sgd);
    }

    // The engineered pair, and only it, must have swapped.
    bool clean = true;
    for (size_t li = 0; li < layers.size(); ++li) {
      auto ev = detect_swaps(masks_before[li], layers[li]->current_mask(), layers[li]->name());
      if (li == best.layer) {
        if (!ev || ev->entered != std::vector<int64_t>{best.enter} ||
            ev->exited != std::vector<int64_t>{best.exit}) {
          clean = false;
        }
      } else if (ev) {
        clean = false;
      }
    }
    out.halvings = attempt;
    out.lr = lr;
    out.layer = target->name();
    out.edge_in = best.enter;
    out.edge_out = best.exit;
    out.first_order = best.first_order;
    out.swap_clean = clean;
    if (!clean) continue;

    auto [loss_after, acc] = evaluate_batch(model, x, y, false);
    (void)acc;
    out.loss_before = loss_before;
    out.loss_after = loss_after;
    if (loss_after < loss_before) {
      out.success = true;
      return out;
    }
  }
  return out;
}

// ---------- Brute-force subnetwork search ----------

struct BruteForceResult {
  std::vector<std::vector<int64_t>> best_mask_indices;  // kept edges per layer
  double best_loss = std::numeric_limits<double>::infinity();
  double best_acc = 0.0;
  int64_t enumerated_count = 0;
  double min_loss = 0.0;
  double median_loss = 0.0;
  double max_loss = 0.0;
  std::vector<double> losses;  // by enumeration index
};

namespace detail {

inline int64_t binom64(int64_t n, int64_t r) {
  if (r < 0 || r > n) return 0;
  r = std::min(r, n - r);
  int64_t out = 1;
  for (int64_t i = 1; i <= r; ++i) {
    out = out * (n - r + i) / i;
  }
  return out;
}

// idx-th r-subset of {0..n-1} in lexicographic order.
inline std::vector<int64_t> unrank_combination(int64_t n, int64_t r, int64_t idx) {
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(r));
  int64_t x = 0;
  while (r > 0) {
    const int64_t c = binom64(n - x - 1, r - 1);
    if (idx < c) {
      out.push_back(x);
      --r;
    } else {
      idx -= c;
    }
    ++x;
  }
  return out;
}

}  // namespace detail

// Exhaustive enumeration of every layerwise mask combination at keep
// fraction k. Refuses when the combination count exceeds the budget.
template <typename T>
BruteForceResult brute_force_subnets(const Model<T>& model, const Dataset<T>& data, double k,
                                     int64_t budget = 1'000'000) {
  check_keep_fraction(k);
  std::vector<int64_t> sizes, keeps, counts;
  {
    auto sel = model.selectable();
    BigInt total = 1;
    for (const auto* l : sel) {
      const int64_t n = l->weights().numel();
      const int64_t r = keep_count(n, k);
      sizes.push_back(n);
      keeps.push_back(r);
      total *= subnetwork_count(n, k);
    }
    if (total > budget) {
      throw ParamError("brute force would enumerate " + total.str() + " masks (budget " +
                       std::to_string(budget) + ")");
    }
    for (size_t i = 0; i < sizes.size(); ++i) {
      counts.push_back(detail::binom64(sizes[i], keeps[i]));
    }
  }
  int64_t total64 = 1;
  for (int64_t c : counts) total64 *= c;

  BruteForceResult result;
  result.enumerated_count = total64;
  result.losses.assign(static_cast<size_t>(total64), 0.0);
  std::vector<double> accs(static_cast<size_t>(total64), 0.0);

#pragma omp parallel
  {
    Model<T> local(model);
    auto sel = local.selectable();
#pragma omp for schedule(static)
    for (int64_t idx = 0; idx < total64; ++idx) {
      int64_t rem = idx;
      for (size_t li = 0; li < sel.size(); ++li) {
        const int64_t ci = rem % counts[li];
        rem /= counts[li];
        auto kept = detail::unrank_combination(sizes[li], keeps[li], ci);
        Tensor<T> mask{sel[li]->weights().shape()};
        for (int64_t e : kept) mask[e] = T{1};
        sel[li]->set_fixed_mask(std::move(mask));
      }
      auto [loss, acc] = evaluate_dataset(local, data);
      result.losses[static_cast<size_t>(idx)] = loss;
      accs[static_cast<size_t>(idx)] = acc;
    }
  }

  int64_t best_idx = 0;
  for (int64_t i = 0; i < total64; ++i) {
    if (result.losses[static_cast<size_t>(i)] < result.losses[static_cast<size_t>(best_idx)]) {
      best_idx = i;
    }
  }
  result.best_loss = result.losses[static_cast<size_t>(best_idx)];
  result.best_acc = accs[static_cast<size_t>(best_idx)];
  {
    int64_t rem = best_idx;
    for (size_t li = 0; li < sizes.size(); ++li) {
      const int64_t ci = rem % counts[li];
      rem /= counts[li];
      result.best_mask_indices.push_back(detail::unrank_combination(sizes[li], keeps[li], ci));
    }
  }
  std::vector<double> sorted = result.losses;
  std::sort(sorted.begin(), sorted.end());
  result.min_loss = sorted.front();
  result.max_loss = sorted.back();
  result.median_loss = sorted[sorted.size() / 2];
  return result;
}

// Loss of `count` uniformly random masks at the model's keep fraction.
template <typename T>
std::vector<double> random_mask_losses(const Model<T>& model, const Dataset<T>& data,
                                       int64_t count, RngStream& rng) {
  std::vector<double> out;
  Model<T> local(model);
  auto sel = local.selectable();
  for (int64_t c = 0; c < count; ++c) {
    for (auto* l : sel) {
      const int64_t n = l->weights().numel();
      const int64_t r = keep_count(n, l->k());
      std::vector<int64_t> idx(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
      rng.shuffle(idx);
      Tensor<T> mask{l->weights().shape()};
      for (int64_t i = 0; i < r; ++i) mask[idx[static_cast<size_t>(i)]] = T{1};
      l->set_fixed_mask(std::move(mask));
    }
    out.push_back(evaluate_dataset(local, data).first);
  }
  return out;
}

// ---------- Gradient oracles ----------

// Central finite differences of f w.r.t. every element of param.
template <typename T, typename F>
Tensor<T> fd_gradient(F f, Tensor<T>& param, T h) {
  Tensor<T> g{param.shape()};
  for (int64_t i = 0; i < param.numel(); ++i) {
    const T keep = param[i];
    param[i] = keep + h;
    const T up = f();
    param[i] = keep - h;
    const T dn = f();
    param[i] = keep;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

// max_i |a_i - b_i| normalized by the larger infinity norm.
template <typename T>
double rel_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw DimError("rel_error shape mismatch");
  double max_diff = 0.0, max_mag = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    max_mag = std::max({max_mag, std::abs(static_cast<double>(a[i])),
                        std::abs(static_cast<double>(b[i]))});
  }
  return max_diff / (max_mag + 1e-300);
}

struct GradOracleReport {
  double max_ste_rel_err = 0.0;   // analytic STE grads vs surrogate autodiff
  double max_dense_rel_err = 0.0; // analytic dense grads vs finite differences
  std::string worst_ste_tensor;
  std::string worst_dense_tensor;
};

// Builds the straight-through surrogate on the autodiff tape: the selection
// function applied to |s| is replaced by a constant plus (|s| - |s0|), so the
// surrogate's value equals the masked forward while its score gradient flows
// through the generic abs/mul/add/matmul/conv backward path.
template <typename T>
GradOracleReport gradient_oracle(Model<T>& model, const Tensor<T>& x,
                                 const std::vector<int>& labels) {
  // Layer-path analytic gradients.
  Tensor<T> logits = model.forward(x, true);
  auto xent = kernels::softmax_xent(logits, labels);
  model.zero_grad();
  model.backward(kernels::softmax_xent_backward(xent.probs, labels));

  // Surrogate tape.
  Graph<T> g;
  using Id = typename Graph<T>::Id;
  Id h = g.input(x, false, "input");
  struct ScoreLeaf {
    Id id;
    std::string name;
    Tensor<T>* analytic;
  };
  std::vector<ScoreLeaf> score_leaves;
  std::vector<ScoreLeaf> weight_leaves;
  for (auto* layer : model.layers()) {
    switch (layer->kind()) {
      case LayerKind::MaskedLinear: {
        auto* lin = static_cast<MaskedLinear<T>*>(layer);
        if (lin->dense()) {
          Id w = g.input(lin->weights(), true, lin->name() + "/weights");
          weight_leaves.push_back({w, lin->name() + "/weights", &lin->weight_grad()});
          h = g.matmul(h, g.transpose2d(w));
        } else {
          Id w = g.constant(lin->weights(), lin->name() + "/weights");
          Id s = g.input(lin->scores(), true, lin->name() + "/scores");
          Id s0_abs = g.constant(kernels::map(lin->scores(), [](T v) { return std::abs(v); }));
          Id m = g.constant(lin->current_mask());
          Id w_eff = g.mul(w, g.add(m, g.sub(g.abs(s), s0_abs)));
          score_leaves.push_back({s, lin->name() + "/scores", &lin->score_grad()});
          h = g.matmul(h, g.transpose2d(w_eff));
        }
        break;
      }
      case LayerKind::MaskedConv: {
        auto* conv = static_cast<MaskedConv<T>*>(layer);
        if (conv->dense()) {
          Id w = g.input(conv->weights(), true, conv->name() + "/weights");
          weight_leaves.push_back({w, conv->name() + "/weights", &conv->weight_grad()});
          h = g.conv2d(h, w, conv->stride(), conv->pad());
        } else {
          Id w = g.constant(conv->weights(), conv->name() + "/weights");
          Id s = g.input(conv->scores(), true, conv->name() + "/scores");
          Id s0_abs = g.constant(kernels::map(conv->scores(), [](T v) { return std::abs(v); }));
          Id m = g.constant(conv->current_mask());
          Id w_eff = g.mul(w, g.add(m, g.sub(g.abs(s), s0_abs)));
          score_leaves.push_back({s, conv->name() + "/scores", &conv->score_grad()});
          h = g.conv2d(h, w_eff, conv->stride(), conv->pad());
        }
        break;
      }
      case LayerKind::Relu: h = g.relu(h); break;
      case LayerKind::MaxPool2: h = g.maxpool2(h); break;
      case LayerKind::Flatten: h = g.flatten2(h); break;
      default:
        throw GraphError("gradient_oracle cannot mirror layer '" + layer->name() + "'");
    }
  }
  Id loss = g.cross_entropy(h, labels);
  auto grads = g.backward(loss);

  GradOracleReport report;
  for (const auto& leaf : score_leaves) {
    const double e = rel_error(*leaf.analytic, grads.at(leaf.id));
    if (e > report.max_ste_rel_err) {
      report.max_ste_rel_err = e;
      report.worst_ste_tensor = leaf.name;
    }
  }

  // Dense path: analytic weight gradients against central finite differences
  // of the layer-path loss itself.
  for (auto* layer : model.layers()) {
    Tensor<T>* wptr = nullptr;
    Tensor<T>* analytic = nullptr;
    std::string name;
    if (auto* lin = dynamic_cast<MaskedLinear<T>*>(layer); lin && lin->dense()) {
      wptr = &lin->weights();
      analytic = &lin->weight_grad();
      name = lin->name() + "/weights";
    } else if (auto* conv = dynamic_cast<MaskedConv<T>*>(layer); conv && conv->dense()) {
      wptr = &conv->weights();
      analytic = &conv->weight_grad();
      name = conv->name() + "/weights";
    }
    if (!wptr) continue;
    auto loss_fn = [&]() -> T {
      Tensor<T> l = model.forward(x, true);
      return kernels::softmax_xent(l, labels).loss;
    };
    Tensor<T> fd = fd_gradient(loss_fn, *wptr, static_cast<T>(1e-5));
    const double e = rel_error(*analytic, fd);
    if (e > report.max_dense_rel_err) {
      report.max_dense_rel_err = e;
      report.worst_dense_tensor = name;
    }
  }
  return report;
}

}  // namespace edgepop
