#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "edgepop/init.hpp"
#include "edgepop/kernels.hpp"
#include "edgepop/optim.hpp"
#include "edgepop/popup.hpp"
#include "edgepop/rng.hpp"
#include "edgepop/tensor.hpp"

namespace edgepop {

enum class Algorithm { EdgePopup, Zhou, DenseSgd, DenseAdam };

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "edge_popup") return Algorithm::EdgePopup;
  if (s == "zhou") return Algorithm::Zhou;
  if (s == "dense_sgd") return Algorithm::DenseSgd;
  if (s == "dense_adam") return Algorithm::DenseAdam;
  throw ConfigError("unknown algorithm '" + s + "'");
}

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::EdgePopup: return "edge_popup";
    case Algorithm::Zhou: return "zhou";
    case Algorithm::DenseSgd: return "dense_sgd";
    case Algorithm::DenseAdam: return "dense_adam";
  }
  return "?";
}

inline bool is_dense(Algorithm a) {
  return a == Algorithm::DenseSgd || a == Algorithm::DenseAdam;
}

enum class LayerKind { MaskedLinear, MaskedConv, ZhouLinear, ZhouConv, Relu, MaxPool2, Flatten, FrozenBatchNorm };

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual const std::string& name() const { return name_; }
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect_params(std::vector<ParamSlot<T>>& /*out*/) {}
  virtual void zero_grad() {}
  virtual std::unique_ptr<Layer<T>> clone() const = 0;

 protected:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

// Common surface of layers that own a frozen weight tensor selected by a
// per-edge rule (popup scores or Zhou logits).
template <typename T>
class SelectableLayer : public Layer<T> {
 public:
  using Layer<T>::Layer;
  Tensor<T>& weights() { return weights_; }
  const Tensor<T>& weights() const { return weights_; }
  virtual Tensor<T>& selector() = 0;          // scores or logits
  virtual Tensor<T> current_mask() const = 0; // deterministic selection state
  virtual int64_t receiver_of(int64_t flat_edge) const = 0;
  double k() const { return k_; }

  // Overrides score-driven selection; used by the brute-force search and the
  // random-mask baselines.
  void set_fixed_mask(std::optional<Tensor<T>> m) {
    if (m && !m->same_shape(weights_)) throw DimError("fixed mask shape mismatch");
    fixed_mask_ = std::move(m);
  }
  const std::optional<Tensor<T>>& fixed_mask() const { return fixed_mask_; }

 protected:
  Tensor<T> weights_;
  double k_ = 1.0;
  std::optional<Tensor<T>> fixed_mask_;
};

// Linear layer with frozen weights [out,in]; forward uses only the edges
// whose score magnitude is in the layer's top k%. No bias. In dense mode the
// weights themselves are trainable and no mask is applied.
template <typename T>
class MaskedLinear : public SelectableLayer<T> {
 public:
  MaskedLinear(std::string name, Tensor<T> weights, Tensor<T> scores, double k, bool dense)
      : SelectableLayer<T>(std::move(name)), dense_(dense) {
    this->weights_ = std::move(weights);
    this->k_ = k;
    scores_ = std::move(scores);
    if (!dense_ && !scores_.same_shape(this->weights_)) {
      throw DimError("scores shape must match weights");
    }
    check_keep_fraction(k);
    score_grad_ = Tensor<T>{this->weights_.shape()};
    if (dense_) weight_grad_ = Tensor<T>{this->weights_.shape()};
  }

  LayerKind kind() const override { return LayerKind::MaskedLinear; }
  bool dense() const { return dense_; }
  Tensor<T>& selector() override { return scores_; }
  Tensor<T>& scores() { return scores_; }
  Tensor<T>& score_grad() { return score_grad_; }
  Tensor<T>& weight_grad() { return weight_grad_; }

  Tensor<T> current_mask() const override {
    if (this->fixed_mask_) return *this->fixed_mask_;
    return get_subnet(scores_, this->k_);
  }

  int64_t receiver_of(int64_t flat_edge) const override {
    return flat_edge / this->weights_.dim(1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*training*/) override {
    if (x.rank() != 2 || x.dim(1) != this->weights_.dim(1)) {
      throw DimError("linear '" + this->name_ + "' expects [N," +
                     std::to_string(this->weights_.dim(1)) + "], got " + shape_str(x.shape()));
    }
    x_cache_ = x;
    if (dense_) {
      return kernels::matmul_nt(x, this->weights_);
    }
    mask_cache_ = current_mask();
    w_eff_cache_ = kernels::mul(this->weights_, mask_cache_);
    return kernels::matmul_nt(x, w_eff_cache_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    if (dense_) {
      kernels::accumulate(weight_grad_, kernels::matmul_tn(dy, x_cache_));
      return kernels::matmul(dy, this->weights_);
    }
    // Straight-through: every edge gets a score gradient, in or out of the
    // subnetwork. The gradient lands on the ranking key |s| and reaches the
    // stored signed score through the sign chain.
    Tensor<T> g = kernels::ste_linear_score_grad(x_cache_, dy, this->weights_);
    kernels::chain_sign(g, scores_);
    kernels::accumulate(score_grad_, g);
    return kernels::matmul(dy, w_eff_cache_);
  }

  void collect_params(std::vector<ParamSlot<T>>& out) override {
    if (dense_) {
      out.push_back({&this->weights_, &weight_grad_, false, this->name_ + "/weights"});
    } else {
      out.push_back({&scores_, &score_grad_, false, this->name_ + "/scores"});
    }
  }

  void zero_grad() override {
    score_grad_.fill(T{0});
    if (dense_) weight_grad_.fill(T{0});
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<MaskedLinear<T>>(*this);
  }

  const Tensor<T>& cached_mask() const { return mask_cache_; }

 private:
  bool dense_ = false;
  Tensor<T> scores_;
  Tensor<T> score_grad_;
  Tensor<T> weight_grad_;
  Tensor<T> x_cache_;
  Tensor<T> mask_cache_;
  Tensor<T> w_eff_cache_;
};

// Convolutional layer with frozen weights [O,C,k,k]; every (u,v,k1,k2) weight
// is an independent edge for selection. Score gradients sum over batch and
// all spatial locations.
template <typename T>
class MaskedConv : public SelectableLayer<T> {
 public:
  MaskedConv(std::string name, Tensor<T> weights, Tensor<T> scores, double k, int64_t stride,
             int64_t pad, bool dense)
      : SelectableLayer<T>(std::move(name)), stride_(stride), pad_(pad), dense_(dense) {
    this->weights_ = std::move(weights);
    this->k_ = k;
    scores_ = std::move(scores);
    if (this->weights_.dim(2) % 2 == 0) throw DimError("conv kernel size must be odd");
    if (!dense_ && !scores_.same_shape(this->weights_)) {
      throw DimError("scores shape must match weights");
    }
    check_keep_fraction(k);
    score_grad_ = Tensor<T>{this->weights_.shape()};
    if (dense_) weight_grad_ = Tensor<T>{this->weights_.shape()};
  }

  LayerKind kind() const override { return LayerKind::MaskedConv; }
  bool dense() const { return dense_; }
  Tensor<T>& selector() override { return scores_; }
  Tensor<T>& scores() { return scores_; }
  Tensor<T>& score_grad() { return score_grad_; }
  Tensor<T>& weight_grad() { return weight_grad_; }
  int64_t stride() const { return stride_; }
  int64_t pad() const { return pad_; }

  Tensor<T> current_mask() const override {
    if (this->fixed_mask_) return *this->fixed_mask_;
    return get_subnet(scores_, this->k_);
  }

  int64_t receiver_of(int64_t flat_edge) const override {
    const auto& s = this->weights_.shape();
    return flat_edge / (s[1] * s[2] * s[3]);
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*training*/) override {
    x_cache_ = x;
    if (dense_) {
      return kernels::conv2d(x, this->weights_, stride_, pad_);
    }
    mask_cache_ = current_mask();
    w_eff_cache_ = kernels::mul(this->weights_, mask_cache_);
    return kernels::conv2d(x, w_eff_cache_, stride_, pad_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const int64_t H = x_cache_.dim(2), W = x_cache_.dim(3);
    if (dense_) {
      kernels::accumulate(weight_grad_,
                          kernels::conv2d_dweight(dy, x_cache_, this->weights_.dim(2), stride_, pad_));
      return kernels::conv2d_dinput(dy, this->weights_, stride_, pad_, H, W);
    }
    Tensor<T> g = kernels::ste_conv_score_grad(x_cache_, dy, this->weights_, stride_, pad_);
    kernels::chain_sign(g, scores_);
    kernels::accumulate(score_grad_, g);
    return kernels::conv2d_dinput(dy, w_eff_cache_, stride_, pad_, H, W);
  }

  void collect_params(std::vector<ParamSlot<T>>& out) override {
    if (dense_) {
      out.push_back({&this->weights_, &weight_grad_, false, this->name_ + "/weights"});
    } else {
      out.push_back({&scores_, &score_grad_, false, this->name_ + "/scores"});
    }
  }

  void zero_grad() override {
    score_grad_.fill(T{0});
    if (dense_) weight_grad_.fill(T{0});
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<MaskedConv<T>>(*this);
  }

  const Tensor<T>& cached_mask() const { return mask_cache_; }

 private:
  int64_t stride_ = 1;
  int64_t pad_ = 0;
  bool dense_ = false;
  Tensor<T> scores_;
  Tensor<T> score_grad_;
  Tensor<T> weight_grad_;
  Tensor<T> x_cache_;
  Tensor<T> mask_cache_;
  Tensor<T> w_eff_cache_;
};

template <typename T>
class ReluLayer : public Layer<T> {
 public:
  explicit ReluLayer(std::string name) : Layer<T>(std::move(name)) {}
  LayerKind kind() const override { return LayerKind::Relu; }
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    x_cache_ = x;
    return kernels::relu(x);
  }
  Tensor<T> backward(const Tensor<T>& dy) override { return kernels::relu_backward(dy, x_cache_); }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReluLayer<T>>(*this); }

 private:
  Tensor<T> x_cache_;
};

template <typename T>
class MaxPool2Layer : public Layer<T> {
 public:
  explicit MaxPool2Layer(std::string name) : Layer<T>(std::move(name)) {}
  LayerKind kind() const override { return LayerKind::MaxPool2; }
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    auto r = kernels::maxpool2(x);
    argmax_ = std::move(r.argmax);
    return std::move(r.y);
  }
  Tensor<T> backward(const Tensor<T>& dy) override {
    return kernels::maxpool2_backward(dy, argmax_, in_shape_);
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<MaxPool2Layer<T>>(*this);
  }

 private:
  std::vector<int64_t> in_shape_;
  std::vector<int64_t> argmax_;
};

template <typename T>
class FlattenLayer : public Layer<T> {
 public:
  explicit FlattenLayer(std::string name) : Layer<T>(std::move(name)) {}
  LayerKind kind() const override { return LayerKind::Flatten; }
  Tensor<T> forward(const Tensor<T>& x, bool) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
  }
  Tensor<T> backward(const Tensor<T>& dy) override { return dy.reshaped(in_shape_); }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<FlattenLayer<T>>(*this);
  }

 private:
  std::vector<int64_t> in_shape_;
};

// Batch norm whose affine transform is pinned at identity (scale 1, bias 0)
// for the life of the model. Training mode normalizes with batch statistics
// and updates the running buffers; eval mode uses the running buffers.
// Supports [N,C] and [N,C,H,W].
template <typename T>
class FrozenBatchNorm : public Layer<T> {
 public:
  FrozenBatchNorm(std::string name, int64_t channels, double momentum = 0.1, double eps = 1e-5)
      : Layer<T>(std::move(name)),
        running_mean_({channels}, T{0}),
        running_var_({channels}, T{1}),
        scale_({channels}, T{1}),
        bias_({channels}, T{0}),
        momentum_(momentum),
        eps_(eps) {}

  LayerKind kind() const override { return LayerKind::FrozenBatchNorm; }
  const Tensor<T>& running_mean() const { return running_mean_; }
  const Tensor<T>& running_var() const { return running_var_; }
  const Tensor<T>& scale() const { return scale_; }
  const Tensor<T>& bias() const { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    const int64_t C = channels_of(x);
    if (C != running_mean_.numel()) {
      throw DimError("batchnorm '" + this->name_ + "' channel mismatch: " +
                     std::to_string(C) + " vs " + std::to_string(running_mean_.numel()));
    }
    x_cache_ = x;
    training_cache_ = training;
    const int64_t per = x.numel() / C;
    mean_cache_ = Tensor<T>({C});
    var_cache_ = Tensor<T>({C});
    if (training) {
      for (int64_t c = 0; c < C; ++c) {
        double m = 0.0;
        for_channel(x, c, [&](T v) { m += static_cast<double>(v); });
        m /= static_cast<double>(per);
        double v2 = 0.0;
        for_channel(x, c, [&](T v) {
          const double d = static_cast<double>(v) - m;
          v2 += d * d;
        });
        v2 /= static_cast<double>(per);  // biased, as used for normalization
        mean_cache_[c] = static_cast<T>(m);
        var_cache_[c] = static_cast<T>(v2);
        const double unbiased = per > 1 ? v2 * per / (per - 1.0) : v2;
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * m);
        running_var_[c] =
            static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
      }
    } else {
      mean_cache_ = running_mean_;
      var_cache_ = running_var_;
    }
    Tensor<T> y{x.shape()};
    xhat_cache_ = Tensor<T>{x.shape()};
    for (int64_t c = 0; c < C; ++c) {
      const T m = mean_cache_[c];
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var_cache_[c]) + eps_));
      transform_channel(x, y, xhat_cache_, c, m, inv);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const int64_t C = channels_of(dy);
    const int64_t per = dy.numel() / C;
    Tensor<T> dx{dy.shape()};
    for (int64_t c = 0; c < C; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(var_cache_[c]) + eps_);
      if (!training_cache_) {
        // Running statistics are constants in eval mode.
        scatter_channel(dy, dx, c, [&](T g, T) { return static_cast<T>(g * inv); });
        continue;
      }
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      int64_t i = 0;
      for_channel2(dy, xhat_cache_, c, [&](T g, T xh) {
        sum_dy += static_cast<double>(g);
        sum_dy_xhat += static_cast<double>(g) * static_cast<double>(xh);
        ++i;
      });
      const double mg = sum_dy / static_cast<double>(per);
      const double mgx = sum_dy_xhat / static_cast<double>(per);
      scatter_channel(dy, dx, c, [&](T g, T xh) {
        return static_cast<T>((static_cast<double>(g) - mg - static_cast<double>(xh) * mgx) * inv);
      });
    }
    return dx;
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<FrozenBatchNorm<T>>(*this);
  }

 private:
  static int64_t channels_of(const Tensor<T>& x) {
    if (x.rank() != 2 && x.rank() != 4) throw DimError("batchnorm expects [N,C] or [N,C,H,W]");
    return x.dim(1);
  }

  template <typename F>
  void for_channel(const Tensor<T>& x, int64_t c, F f) const {
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    for (int64_t n = 0; n < N; ++n) {
      const T* p = x.data() + (n * C + c) * hw;
      for (int64_t q = 0; q < hw; ++q) f(p[q]);
    }
  }

  template <typename F>
  void for_channel2(const Tensor<T>& a, const Tensor<T>& b, int64_t c, F f) const {
    const int64_t N = a.dim(0), C = a.dim(1);
    const int64_t hw = a.rank() == 4 ? a.dim(2) * a.dim(3) : 1;
    for (int64_t n = 0; n < N; ++n) {
      const T* pa = a.data() + (n * C + c) * hw;
      const T* pb = b.data() + (n * C + c) * hw;
      for (int64_t q = 0; q < hw; ++q) f(pa[q], pb[q]);
    }
  }

  template <typename F>
  void scatter_channel(const Tensor<T>& dy, Tensor<T>& dx, int64_t c, F f) const {
    const int64_t N = dy.dim(0), C = dy.dim(1);
    const int64_t hw = dy.rank() == 4 ? dy.dim(2) * dy.dim(3) : 1;
    for (int64_t n = 0; n < N; ++n) {
      const T* pg = dy.data() + (n * C + c) * hw;
      const T* ph = xhat_cache_.data() + (n * C + c) * hw;
      T* pd = dx.data() + (n * C + c) * hw;
      for (int64_t q = 0; q < hw; ++q) pd[q] = f(pg[q], ph[q]);
    }
  }

  void transform_channel(const Tensor<T>& x, Tensor<T>& y, Tensor<T>& xhat, int64_t c, T m,
                         T inv) const {
    const int64_t N = x.dim(0), C = x.dim(1);
    const int64_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    for (int64_t n = 0; n < N; ++n) {
      const T* px = x.data() + (n * C + c) * hw;
      T* py = y.data() + (n * C + c) * hw;
      T* ph = xhat.data() + (n * C + c) * hw;
      for (int64_t q = 0; q < hw; ++q) {
        ph[q] = (px[q] - m) * inv;
        py[q] = ph[q];  // affine identity: scale 1, bias 0
      }
    }
  }

  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Tensor<T> scale_;
  Tensor<T> bias_;
  double momentum_;
  double eps_;
  Tensor<T> x_cache_;
  Tensor<T> xhat_cache_;
  Tensor<T> mean_cache_;
  Tensor<T> var_cache_;
  bool training_cache_ = false;
};

}  // namespace edgepop
