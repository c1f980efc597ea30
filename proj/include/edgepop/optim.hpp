#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "edgepop/tensor.hpp"

namespace edgepop {

// A parameter the optimizer may touch. Frozen tensors are never registered;
// the optimizer asserts this on every step.
template <typename T>
struct ParamSlot {
  Tensor<T>* param = nullptr;
  Tensor<T>* grad = nullptr;
  bool frozen = false;
  std::string name;
};

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// v <- momentum*v + (g + wd*p); p <- p - lr*v
template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
                const SgdOptions& opt) {
  if (!param.same_shape(grad)) throw DimError("sgd_update shape mismatch");
  if (velocity.numel() == 0) velocity = Tensor<T>{param.shape()};
  T* p = param.data();
  const T* g = grad.data();
  T* v = velocity.data();
  const T lr = static_cast<T>(opt.lr);
  const T mom = static_cast<T>(opt.momentum);
  const T wd = static_cast<T>(opt.weight_decay);
  const int64_t n = param.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    v[i] = mom * v[i] + (g[i] + wd * p[i]);
    p[i] -= lr * v[i];
  }
}

template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  int64_t step = 0;
};

template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& st,
                 const AdamOptions& opt) {
  if (!param.same_shape(grad)) throw DimError("adam_update shape mismatch");
  if (st.m.numel() == 0) {
    st.m = Tensor<T>{param.shape()};
    st.v = Tensor<T>{param.shape()};
  }
  ++st.step;
  const double b1 = opt.beta1, b2 = opt.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  T* p = param.data();
  const T* g = grad.data();
  T* m = st.m.data();
  T* v = st.v.data();
  const int64_t n = param.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    m[i] = static_cast<T>(b1) * m[i] + static_cast<T>(1.0 - b1) * g[i];
    v[i] = static_cast<T>(b2) * v[i] + static_cast<T>(1.0 - b2) * g[i] * g[i];
    const double mhat = static_cast<double>(m[i]) / bc1;
    const double vhat = static_cast<double>(v[i]) / bc2;
    p[i] -= static_cast<T>(opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
  }
}

// base_lr * 0.5 * (1 + cos(pi * epoch / total)), stepped per epoch.
inline double cosine_lr(int64_t epoch, int64_t total_epochs, double base_lr) {
  if (epoch < 0 || epoch > total_epochs) {
    throw ParamError("cosine_lr epoch " + std::to_string(epoch) + " outside [0," +
                     std::to_string(total_epochs) + "]");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                         static_cast<double>(total_epochs)));
}

enum class OptimizerKind { Sgd, Adam };

// Owns per-parameter state for a set of trainable slots.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, SgdOptions sgd, AdamOptions adam, std::vector<ParamSlot<T>> slots)
      : kind_(kind), sgd_(sgd), adam_(adam), slots_(std::move(slots)) {
    for (const auto& s : slots_) {
      if (s.frozen) throw ParamError("optimizer registered frozen tensor '" + s.name + "'");
    }
    velocities_.resize(slots_.size());
    adam_states_.resize(slots_.size());
  }

  void set_lr(double lr) {
    sgd_.lr = lr;
    adam_.lr = lr;
  }
  double lr() const { return kind_ == OptimizerKind::Sgd ? sgd_.lr : adam_.lr; }

  void step() {
    for (size_t i = 0; i < slots_.size(); ++i) {
      auto& s = slots_[i];
      if (s.frozen) throw ParamError("frozen tensor reached optimizer step");
      if (kind_ == OptimizerKind::Sgd) {
        sgd_update(*s.param, *s.grad, velocities_[i], sgd_);
      } else {
        adam_update(*s.param, *s.grad, adam_states_[i], adam_);
      }
    }
  }

  const std::vector<ParamSlot<T>>& slots() const { return slots_; }
  std::vector<Tensor<T>>& velocities() { return velocities_; }
  std::vector<AdamState<T>>& adam_states() { return adam_states_; }
  OptimizerKind kind() const { return kind_; }

 private:
  OptimizerKind kind_;
  SgdOptions sgd_;
  AdamOptions adam_;
  std::vector<ParamSlot<T>> slots_;
  std::vector<Tensor<T>> velocities_;
  std::vector<AdamState<T>> adam_states_;
};

}  // namespace edgepop
