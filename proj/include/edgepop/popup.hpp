#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "edgepop/optim.hpp"
#include "edgepop/tensor.hpp"

namespace edgepop {

inline void check_keep_fraction(double k) {
  if (!(k > 0.0) || k > 1.0) {
    throw ParamError("keep fraction k must be in (0,1], got " + std::to_string(k));
  }
}

// Number of zeroed edges in a layer of n: floor((1-k)*n), evaluated in double
// to match the canonical selection semantics.
inline int64_t drop_count(int64_t n, double k) {
  check_keep_fraction(k);
  return static_cast<int64_t>(std::floor((1.0 - k) * static_cast<double>(n)));
}

inline int64_t keep_count(int64_t n, double k) { return n - drop_count(n, k); }

// Top-k% selection by score magnitude. The j = floor((1-k)*n) elements with
// the smallest |score| get 0, the rest get 1. Ties are broken by flat index:
// among equal magnitudes the lowest indices are zeroed first, exactly as a
// stable ascending sort on (|score|, index) would order them. Implemented
// with nth_element on that same key, which is O(n) and selects the identical
// set.
template <typename T>
Tensor<T> get_subnet(const Tensor<T>& scores, double k) {
  check_keep_fraction(k);
  const int64_t n = scores.numel();
  if (n == 0) throw ParamError("get_subnet on empty score tensor");
  const int64_t j = drop_count(n, k);
  Tensor<T> mask{scores.shape()};
  if (j == 0) {
    mask.fill(T{1});
    return mask;
  }
  std::vector<std::pair<T, int64_t>> keyed(static_cast<size_t>(n));
  const T* ps = scores.data();
  for (int64_t i = 0; i < n; ++i) keyed[static_cast<size_t>(i)] = {std::abs(ps[i]), i};
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<size_t>(j - 1), keyed.end());
  const std::pair<T, int64_t> pivot = keyed[static_cast<size_t>(j - 1)];
  T* pm = mask.data();
  for (int64_t i = 0; i < n; ++i) {
    pm[i] = (std::make_pair(std::abs(ps[i]), i) > pivot) ? T{1} : T{0};
  }
  return mask;
}

// Eq.-level straight-through score gradient for one edge: the upstream
// gradient at the receiving node times the frozen weight times the sending
// activation. Applies whether or not the edge is currently in the subnetwork.
template <typename T>
T ste_score_grad(T upstream, T weight, T activation) {
  return upstream * weight * activation;
}

// One SGD step on the raw signed scores (momentum and weight decay included;
// the absolute value enters only at ranking time in get_subnet). When
// abs_clamp is set the stored scores are clamped to their magnitude after the
// step instead, for comparison experiments.
template <typename T>
void score_step(Tensor<T>& scores, const Tensor<T>& grads, Tensor<T>& velocity,
                const SgdOptions& opt, bool abs_clamp = false) {
  sgd_update(scores, grads, velocity, opt);
  if (abs_clamp) {
    for (int64_t i = 0; i < scores.numel(); ++i) scores[i] = std::abs(scores[i]);
  }
}

template <typename T>
int64_t mask_popcount(const Tensor<T>& mask) {
  int64_t c = 0;
  for (int64_t i = 0; i < mask.numel(); ++i) c += (mask[i] != T{0}) ? 1 : 0;
  return c;
}

// Edges entering/exiting a layer's subnetwork between two optimizer steps.
// entered/exited sizes always match when the two masks have equal popcount.
struct SwapEvent {
  std::string layer_id;
  std::vector<int64_t> entered;
  std::vector<int64_t> exited;
  double loss_before = std::numeric_limits<double>::quiet_NaN();
  double loss_after = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
std::optional<SwapEvent> detect_swaps(const Tensor<T>& before, const Tensor<T>& after,
                                      std::string layer_id) {
  if (!before.same_shape(after)) throw DimError("detect_swaps mask shape mismatch");
  SwapEvent ev;
  ev.layer_id = std::move(layer_id);
  for (int64_t i = 0; i < before.numel(); ++i) {
    const bool b = before[i] != T{0};
    const bool a = after[i] != T{0};
    if (a && !b) ev.entered.push_back(i);
    if (b && !a) ev.exited.push_back(i);
  }
  if (ev.entered.empty() && ev.exited.empty()) return std::nullopt;
  return ev;
}

}  // namespace edgepop
