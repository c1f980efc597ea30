#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "edgepop/rng.hpp"
#include "edgepop/tensor.hpp"

namespace edgepop {

enum class InitKind { KaimingNormal, SignedKaimingConstant, KaimingUniform, XavierNormal };

struct InitSpec {
  InitKind kind = InitKind::SignedKaimingConstant;
  bool scaled = false;  // multiply by sqrt(1/k) to restore forward variance at sparsity k
  double k = 1.0;       // keep fraction, used only when scaled
};

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "kaiming_normal") return InitKind::KaimingNormal;
  if (s == "signed_constant") return InitKind::SignedKaimingConstant;
  if (s == "kaiming_uniform") return InitKind::KaimingUniform;
  if (s == "xavier_normal") return InitKind::XavierNormal;
  throw ConfigError("unknown init kind '" + s + "'");
}

inline std::string init_kind_name(InitKind k) {
  switch (k) {
    case InitKind::KaimingNormal: return "kaiming_normal";
    case InitKind::SignedKaimingConstant: return "signed_constant";
    case InitKind::KaimingUniform: return "kaiming_uniform";
    case InitKind::XavierNormal: return "xavier_normal";
  }
  return "?";
}

namespace detail {
inline void check_fan_in(int64_t fan_in) {
  if (fan_in <= 0) throw ParamError("fan_in must be positive, got " + std::to_string(fan_in));
}
}  // namespace detail

// N(0, sqrt(2/fan_in))
template <typename T>
Tensor<T> kaiming_normal(const std::vector<int64_t>& shape, int64_t fan_in, RngStream& rng) {
  detail::check_fan_in(fan_in);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> t{shape};
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

// Uniform over the two-point set {-sigma_k, +sigma_k}, sigma_k = sqrt(2/fan_in).
template <typename T>
Tensor<T> signed_kaiming_constant(const std::vector<int64_t>& shape, int64_t fan_in,
                                  RngStream& rng) {
  detail::check_fan_in(fan_in);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  Tensor<T> t{shape};
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(rng.bernoulli(0.5) ? sd : -sd);
  }
  return t;
}

// N(0, sqrt(1/fan_in)); the sqrt(2) gain is omitted.
template <typename T>
Tensor<T> xavier_normal(const std::vector<int64_t>& shape, int64_t fan_in, RngStream& rng) {
  detail::check_fan_in(fan_in);
  const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
  Tensor<T> t{shape};
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)); variance 2/fan_in.
template <typename T>
Tensor<T> kaiming_uniform(const std::vector<int64_t>& shape, int64_t fan_in, RngStream& rng) {
  detail::check_fan_in(fan_in);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t{shape};
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

// Multiplies every element by sqrt(1/k). Exact variance change of 1/k.
template <typename T>
Tensor<T> apply_scale(const InitSpec& spec, Tensor<T> t) {
  if (spec.k <= 0.0 || spec.k > 1.0) {
    throw ParamError("scaled init requires k in (0,1], got " + std::to_string(spec.k));
  }
  const T m = static_cast<T>(std::sqrt(1.0 / spec.k));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] *= m;
  return t;
}

template <typename T>
Tensor<T> init_weights(const InitSpec& spec, const std::vector<int64_t>& shape, int64_t fan_in,
                       RngStream& rng) {
  Tensor<T> t;
  switch (spec.kind) {
    case InitKind::KaimingNormal: t = kaiming_normal<T>(shape, fan_in, rng); break;
    case InitKind::SignedKaimingConstant: t = signed_kaiming_constant<T>(shape, fan_in, rng); break;
    case InitKind::KaimingUniform: t = kaiming_uniform<T>(shape, fan_in, rng); break;
    case InitKind::XavierNormal: t = xavier_normal<T>(shape, fan_in, rng); break;
  }
  if (spec.scaled) t = apply_scale(spec, std::move(t));
  return t;
}

// Popup score initialization: dense symmetric spread, kaiming-uniform shaped,
// so the initial top-k selection is independent of the weight values.
template <typename T>
Tensor<T> score_init(const std::vector<int64_t>& shape, int64_t fan_in, RngStream& rng) {
  return kaiming_uniform<T>(shape, fan_in, rng);
}

// fan_in of a weight tensor: trailing extents product ([out,in] -> in,
// [O,C,k,k] -> C*k*k).
inline int64_t fan_in_of(const std::vector<int64_t>& shape) {
  if (shape.size() < 2) throw ParamError("fan_in needs a rank >= 2 weight shape");
  int64_t f = 1;
  for (size_t i = 1; i < shape.size(); ++i) f *= shape[i];
  return f;
}

}  // namespace edgepop
