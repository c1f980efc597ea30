#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "edgepop/init.hpp"
#include "edgepop/layers.hpp"
#include "edgepop/popup.hpp"
#include "edgepop/rng.hpp"
#include "edgepop/zhou.hpp"

namespace edgepop {

// Exact rational width multiplier so integrality of scaled widths is checked
// without float round-off. Accepts "2", "0.5", "3/2".
struct Rational {
  int64_t num = 1;
  int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  void reduce() {
    const int64_t g = std::gcd(num, den);
    if (g > 0) {
      num /= g;
      den /= g;
    }
  }
};

inline Rational parse_rational(const std::string& s) {
  try {
    Rational r;
    if (auto slash = s.find('/'); slash != std::string::npos) {
      r.num = std::stoll(s.substr(0, slash));
      r.den = std::stoll(s.substr(slash + 1));
    } else if (auto dot = s.find('.'); dot != std::string::npos) {
      const std::string digits = s.substr(0, dot) + s.substr(dot + 1);
      r.num = std::stoll(digits);
      r.den = 1;
      for (size_t i = dot + 1; i < s.size(); ++i) r.den *= 10;
    } else {
      r.num = std::stoll(s);
    }
    if (r.num <= 0 || r.den <= 0) throw ParamError("width multiplier must be positive: " + s);
    r.reduce();
    return r;
  } catch (const std::invalid_argument&) {
    throw ConfigError("cannot parse rational '" + s + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError("cannot parse rational '" + s + "'");
  }
}

inline int64_t scale_width(int64_t w, const Rational& m) {
  const int64_t scaled = w * m.num;
  if (scaled % m.den != 0) {
    throw ParamError("width " + std::to_string(w) + " * " + std::to_string(m.num) + "/" +
                     std::to_string(m.den) + " is not integral");
  }
  return scaled / m.den;
}

enum class ArchName { Conv2, Conv4, Conv6, Conv8, Mlp };

inline ArchName parse_arch_name(const std::string& s) {
  if (s == "conv2") return ArchName::Conv2;
  if (s == "conv4") return ArchName::Conv4;
  if (s == "conv6") return ArchName::Conv6;
  if (s == "conv8") return ArchName::Conv8;
  if (s == "mlp") return ArchName::Mlp;
  throw ConfigError("unknown architecture '" + s + "'");
}

inline std::string arch_name_str(ArchName a) {
  switch (a) {
    case ArchName::Conv2: return "conv2";
    case ArchName::Conv4: return "conv4";
    case ArchName::Conv6: return "conv6";
    case ArchName::Conv8: return "conv8";
    case ArchName::Mlp: return "mlp";
  }
  return "?";
}

struct ArchSpec {
  ArchName name = ArchName::Mlp;
  Rational width_multiplier{1, 1};
  int64_t classes = 10;
};

// VGG-style conv plans: channel widths at multiplier 1, pool after each pair.
inline std::vector<int64_t> conv_plan(ArchName a) {
  switch (a) {
    case ArchName::Conv2: return {64, 64};
    case ArchName::Conv4: return {64, 64, 128, 128};
    case ArchName::Conv6: return {64, 64, 128, 128, 256, 256};
    case ArchName::Conv8: return {64, 64, 128, 128, 256, 256, 512, 512};
    case ArchName::Mlp: return {};
  }
  return {};
}

template <typename T>
class Model {
 public:
  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  Model(const Model& o) : algo_(o.algo_), k_(o.k_), input_shape_(o.input_shape_) {
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Model& operator=(const Model& o) {
    Model tmp(o);
    *this = std::move(tmp);
    return *this;
  }

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, training);
    return h;
  }

  // Propagates the logit gradient back through the stack; parameter gradients
  // accumulate inside the layers.
  void backward(const Tensor<T>& dlogits) {
    Tensor<T> g = dlogits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  std::vector<ParamSlot<T>> trainable_slots() {
    std::vector<ParamSlot<T>> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }

  std::vector<SelectableLayer<T>*> selectable() {
    std::vector<SelectableLayer<T>*> out;
    for (auto& l : layers_) {
      if (auto* s = dynamic_cast<SelectableLayer<T>*>(l.get())) out.push_back(s);
    }
    return out;
  }
  std::vector<const SelectableLayer<T>*> selectable() const {
    std::vector<const SelectableLayer<T>*> out;
    for (const auto& l : layers_) {
      if (const auto* s = dynamic_cast<const SelectableLayer<T>*>(l.get())) out.push_back(s);
    }
    return out;
  }

  std::vector<Layer<T>*> layers() {
    std::vector<Layer<T>*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
  }
  std::vector<const Layer<T>*> layers() const {
    std::vector<const Layer<T>*> out;
    for (const auto& l : layers_) out.push_back(l.get());
    return out;
  }

  Algorithm algorithm() const { return algo_; }
  double k() const { return k_; }
  const std::vector<int64_t>& input_shape() const { return input_shape_; }
  void set_meta(Algorithm a, double k, std::vector<int64_t> input_shape) {
    algo_ = a;
    k_ = k;
    input_shape_ = std::move(input_shape);
  }

  int64_t total_weights() const {
    int64_t n = 0;
    for (const auto* s : selectable()) n += s->weights().numel();
    return n;
  }

  // |E|: retained edges. Popup uses the exact per-layer keep count; Zhou uses
  // the thresholded mask; dense keeps everything.
  int64_t subnet_size() const {
    int64_t n = 0;
    for (const auto* s : selectable()) {
      if (algo_ == Algorithm::EdgePopup) {
        n += keep_count(s->weights().numel(), s->k());
      } else if (algo_ == Algorithm::Zhou) {
        n += mask_popcount(s->current_mask());
      } else {
        n += s->weights().numel();
      }
    }
    return n;
  }

  std::vector<std::pair<std::string, uint64_t>> weight_hashes() const {
    std::vector<std::pair<std::string, uint64_t>> out;
    for (const auto* s : selectable()) out.emplace_back(s->name(), s->weights().byte_hash());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  Algorithm algo_ = Algorithm::EdgePopup;
  double k_ = 1.0;
  std::vector<int64_t> input_shape_;
};

namespace detail {

template <typename T>
std::unique_ptr<Layer<T>> make_linear(const std::string& name, int64_t in, int64_t out, double k,
                                      const InitSpec& init, Algorithm algo, RngStream& root) {
  RngStream wrng = root.fork(name + "/weights");
  Tensor<T> w = init_weights<T>(init, {out, in}, in, wrng);
  if (algo == Algorithm::Zhou) {
    Tensor<T> logits({out, in}, T{0});
    return std::make_unique<ZhouLinear<T>>(name, std::move(w), std::move(logits),
                                           root.fork(name + "/zhou_sample"));
  }
  RngStream srng = root.fork(name + "/scores");
  Tensor<T> s = score_init<T>({out, in}, in, srng);
  return std::make_unique<MaskedLinear<T>>(name, std::move(w), std::move(s), k, is_dense(algo));
}

template <typename T>
std::unique_ptr<Layer<T>> make_conv(const std::string& name, int64_t in_ch, int64_t out_ch,
                                    int64_t ksize, double k, const InitSpec& init, Algorithm algo,
                                    RngStream& root) {
  const int64_t fan_in = in_ch * ksize * ksize;
  RngStream wrng = root.fork(name + "/weights");
  Tensor<T> w = init_weights<T>(init, {out_ch, in_ch, ksize, ksize}, fan_in, wrng);
  if (algo == Algorithm::Zhou) {
    Tensor<T> logits({out_ch, in_ch, ksize, ksize}, T{0});
    return std::make_unique<ZhouConv<T>>(name, std::move(w), std::move(logits), 1, (ksize - 1) / 2,
                                         root.fork(name + "/zhou_sample"));
  }
  RngStream srng = root.fork(name + "/scores");
  Tensor<T> s = score_init<T>({out_ch, in_ch, ksize, ksize}, fan_in, srng);
  return std::make_unique<MaskedConv<T>>(name, std::move(w), std::move(s), k, 1, (ksize - 1) / 2,
                                         is_dense(algo));
}

}  // namespace detail

// Constructs the masked network for an input of shape [C,H,W] (conv models)
// or [D] (MLP; image inputs are flattened). Conv models use 3x3 stride-1
// shape-preserving convs, 2x2 pooling after each Table-1 pair, then
// fully-connected 256m, 256m, classes. No bias terms and no normalization
// layers anywhere.
template <typename T>
Model<T> build_model(const ArchSpec& arch, double k, const InitSpec& init, Algorithm algo,
                     const std::vector<int64_t>& input_shape, RngStream& rng) {
  check_keep_fraction(k);
  Model<T> model;
  model.set_meta(algo, k, input_shape);
  const Rational& m = arch.width_multiplier;
  const int64_t fc_width = scale_width(256, m);

  if (arch.name == ArchName::Mlp) {
    int64_t d = 1;
    for (int64_t e : input_shape) d *= e;
    if (input_shape.size() > 1) model.add(std::make_unique<FlattenLayer<T>>("flatten"));
    model.add(detail::make_linear<T>("fc1", d, fc_width, k, init, algo, rng));
    model.add(std::make_unique<ReluLayer<T>>("relu_fc1"));
    model.add(detail::make_linear<T>("fc2", fc_width, fc_width, k, init, algo, rng));
    model.add(std::make_unique<ReluLayer<T>>("relu_fc2"));
    model.add(detail::make_linear<T>("fc3", fc_width, arch.classes, k, init, algo, rng));
    return model;
  }

  if (input_shape.size() != 3) {
    throw ParamError("conv architectures need a [C,H,W] input shape");
  }
  int64_t ch = input_shape[0], H = input_shape[1], W = input_shape[2];
  const auto plan = conv_plan(arch.name);
  int64_t conv_idx = 0;
  for (size_t i = 0; i < plan.size(); ++i) {
    const int64_t out_ch = scale_width(plan[i], m);
    ++conv_idx;
    const std::string name = "conv" + std::to_string(conv_idx);
    model.add(detail::make_conv<T>(name, ch, out_ch, 3, k, init, algo, rng));
    model.add(std::make_unique<ReluLayer<T>>("relu_" + name));
    ch = out_ch;
    if (i % 2 == 1) {
      model.add(std::make_unique<MaxPool2Layer<T>>("pool" + std::to_string((i + 1) / 2)));
      H /= 2;
      W /= 2;
      if (H < 1 || W < 1) throw ParamError("input too small for architecture");
    }
  }
  model.add(std::make_unique<FlattenLayer<T>>("flatten"));
  const int64_t flat = ch * H * W;
  model.add(detail::make_linear<T>("fc1", flat, fc_width, k, init, algo, rng));
  model.add(std::make_unique<ReluLayer<T>>("relu_fc1"));
  model.add(detail::make_linear<T>("fc2", fc_width, fc_width, k, init, algo, rng));
  model.add(std::make_unique<ReluLayer<T>>("relu_fc2"));
  model.add(detail::make_linear<T>("fc3", fc_width, arch.classes, k, init, algo, rng));
  return model;
}

}  // namespace edgepop
