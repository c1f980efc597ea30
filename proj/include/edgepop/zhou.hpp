#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "edgepop/kernels.hpp"
#include "edgepop/layers.hpp"
#include "edgepop/rng.hpp"
#include "edgepop/tensor.hpp"

namespace edgepop {

// Stochastic supermask baseline: each frozen weight carries a logit m with
// inclusion probability p = sigmoid(m). Training samples a Bernoulli mask per
// forward pass; eval thresholds at p >= 0.5 (sampled eval available behind a
// flag). Logit gradients are straight-through on the Bernoulli sample with
// the sigmoid factor retained: dL/dm = dL/dI * w * Z * p(1-p).
template <typename T>
class ZhouLinear : public SelectableLayer<T> {
 public:
  ZhouLinear(std::string name, Tensor<T> weights, Tensor<T> logits, RngStream rng,
             bool sampled_eval = false)
      : SelectableLayer<T>(std::move(name)), logits_(std::move(logits)), rng_(std::move(rng)),
        sampled_eval_(sampled_eval) {
    this->weights_ = std::move(weights);
    this->k_ = 1.0;
    if (!logits_.same_shape(this->weights_)) throw DimError("logits shape must match weights");
    logit_grad_ = Tensor<T>{this->weights_.shape()};
  }

  LayerKind kind() const override { return LayerKind::ZhouLinear; }
  Tensor<T>& selector() override { return logits_; }
  Tensor<T>& logits() { return logits_; }
  Tensor<T>& logit_grad() { return logit_grad_; }
  const Tensor<T>& last_sample() const { return sample_cache_; }

  Tensor<T> probabilities() const { return kernels::sigmoid(logits_); }

  // Deterministic selection state: the thresholded mask.
  Tensor<T> current_mask() const override {
    if (this->fixed_mask_) return *this->fixed_mask_;
    Tensor<T> p = probabilities();
    return kernels::map(p, [](T v) { return v >= T{0.5} ? T{1} : T{0}; });
  }

  int64_t receiver_of(int64_t flat_edge) const override {
    return flat_edge / this->weights_.dim(1);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    x_cache_ = x;
    p_cache_ = probabilities();
    if (training || sampled_eval_) {
      sample_cache_ = Tensor<T>{p_cache_.shape()};
      for (int64_t i = 0; i < p_cache_.numel(); ++i) {
        sample_cache_[i] = rng_.bernoulli(static_cast<double>(p_cache_[i])) ? T{1} : T{0};
      }
    } else {
      sample_cache_ = current_mask();
    }
    w_eff_cache_ = kernels::mul(this->weights_, sample_cache_);
    return kernels::matmul_nt(x, w_eff_cache_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dm = kernels::ste_linear_score_grad(x_cache_, dy, this->weights_);
    kernels::accumulate(
        logit_grad_,
        kernels::zip(dm, p_cache_, [](T g, T p) { return g * p * (T{1} - p); }, "zhou_logit_grad"));
    return kernels::matmul(dy, w_eff_cache_);
  }

  void collect_params(std::vector<ParamSlot<T>>& out) override {
    out.push_back({&logits_, &logit_grad_, false, this->name_ + "/logits"});
  }

  void zero_grad() override { logit_grad_.fill(T{0}); }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<ZhouLinear<T>>(*this);
  }

 private:
  Tensor<T> logits_;
  Tensor<T> logit_grad_;
  RngStream rng_;
  bool sampled_eval_ = false;
  Tensor<T> x_cache_;
  Tensor<T> p_cache_;
  Tensor<T> sample_cache_;
  Tensor<T> w_eff_cache_;
};

template <typename T>
class ZhouConv : public SelectableLayer<T> {
 public:
  ZhouConv(std::string name, Tensor<T> weights, Tensor<T> logits, int64_t stride, int64_t pad,
           RngStream rng, bool sampled_eval = false)
      : SelectableLayer<T>(std::move(name)), logits_(std::move(logits)), stride_(stride),
        pad_(pad), rng_(std::move(rng)), sampled_eval_(sampled_eval) {
    this->weights_ = std::move(weights);
    this->k_ = 1.0;
    if (!logits_.same_shape(this->weights_)) throw DimError("logits shape must match weights");
    logit_grad_ = Tensor<T>{this->weights_.shape()};
  }

  LayerKind kind() const override { return LayerKind::ZhouConv; }
  Tensor<T>& selector() override { return logits_; }
  Tensor<T>& logits() { return logits_; }
  Tensor<T>& logit_grad() { return logit_grad_; }
  int64_t stride() const { return stride_; }
  int64_t pad() const { return pad_; }

  Tensor<T> probabilities() const { return kernels::sigmoid(logits_); }

  Tensor<T> current_mask() const override {
    if (this->fixed_mask_) return *this->fixed_mask_;
    Tensor<T> p = probabilities();
    return kernels::map(p, [](T v) { return v >= T{0.5} ? T{1} : T{0}; });
  }

  int64_t receiver_of(int64_t flat_edge) const override {
    const auto& s = this->weights_.shape();
    return flat_edge / (s[1] * s[2] * s[3]);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    x_cache_ = x;
    p_cache_ = probabilities();
    if (training || sampled_eval_) {
      sample_cache_ = Tensor<T>{p_cache_.shape()};
      for (int64_t i = 0; i < p_cache_.numel(); ++i) {
        sample_cache_[i] = rng_.bernoulli(static_cast<double>(p_cache_[i])) ? T{1} : T{0};
      }
    } else {
      sample_cache_ = current_mask();
    }
    w_eff_cache_ = kernels::mul(this->weights_, sample_cache_);
    return kernels::conv2d(x, w_eff_cache_, stride_, pad_);
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dm = kernels::ste_conv_score_grad(x_cache_, dy, this->weights_, stride_, pad_);
    kernels::accumulate(
        logit_grad_,
        kernels::zip(dm, p_cache_, [](T g, T p) { return g * p * (T{1} - p); }, "zhou_logit_grad"));
    return kernels::conv2d_dinput(dy, w_eff_cache_, stride_, pad_, x_cache_.dim(2),
                                  x_cache_.dim(3));
  }

  void collect_params(std::vector<ParamSlot<T>>& out) override {
    out.push_back({&logits_, &logit_grad_, false, this->name_ + "/logits"});
  }

  void zero_grad() override { logit_grad_.fill(T{0}); }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ZhouConv<T>>(*this); }

 private:
  Tensor<T> logits_;
  Tensor<T> logit_grad_;
  int64_t stride_ = 1;
  int64_t pad_ = 0;
  RngStream rng_;
  bool sampled_eval_ = false;
  Tensor<T> x_cache_;
  Tensor<T> p_cache_;
  Tensor<T> sample_cache_;
  Tensor<T> w_eff_cache_;
};

}  // namespace edgepop
