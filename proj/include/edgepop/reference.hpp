#pragma once

#include <cmath>
#include <vector>

#include "edgepop/kernels.hpp"
#include "edgepop/tensor.hpp"

// Serial reference kernels. Naive per-output-element loops, no OpenMP, loop
// orders deliberately different from the parallel versions. Tests check the
// parallel kernels against these; the benchmark target compares their speed.
namespace edgepop::ref {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  kernels::check_matmul(a, b, 1, 0);
  const int64_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc{0};
      for (int64_t k = 0; k < p; ++k) acc += a[i * p + k] * b[k * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  kernels::check_matmul(a, b, 1, 1);
  const int64_t m = a.dim(0), p = a.dim(1), n = b.dim(0);
  Tensor<T> c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc{0};
      for (int64_t k = 0; k < p; ++k) acc += a[i * p + k] * b[j * p + k];
      c[i * n + j] = acc;
    }
  }
  return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  kernels::check_matmul(a, b, 0, 0);
  const int64_t p = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc{0};
      for (int64_t k = 0; k < p; ++k) acc += a[k * m + i] * b[k * n + j];
      c[i * n + j] = acc;
    }
  }
  return c;
}

// Per-output-element accumulation in (c,k1,k2) order, mirroring the layer
// formula one scalar at a time.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad) {
  kernels::check_conv_args(x, w, stride);
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), K = w.dim(2);
  const int64_t Ho = kernels::conv_out_extent(H, K, stride, pad);
  const int64_t Wo = kernels::conv_out_extent(W, K, stride, pad);
  Tensor<T> y({N, O, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          T acc{0};
          for (int64_t c = 0; c < C; ++c)
            for (int64_t k1 = 0; k1 < K; ++k1)
              for (int64_t k2 = 0; k2 < K; ++k2) {
                const int64_t ih = oh * stride - pad + k1;
                const int64_t iw = ow * stride - pad + k2;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += w[((o * C + c) * K + k1) * K + k2] * x[((n * C + c) * H + ih) * W + iw];
              }
          y[((n * O + o) * Ho + oh) * Wo + ow] = acc;
        }
  return y;
}

template <typename T>
Tensor<T> conv2d_dinput(const Tensor<T>& dy, const Tensor<T>& w, int64_t stride, int64_t pad,
                        int64_t H, int64_t W) {
  const int64_t N = dy.dim(0), O = dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  const int64_t C = w.dim(1), K = w.dim(2);
  Tensor<T> dx({N, C, H, W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          const T g = dy[((n * O + o) * Ho + oh) * Wo + ow];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t k1 = 0; k1 < K; ++k1)
              for (int64_t k2 = 0; k2 < K; ++k2) {
                const int64_t ih = oh * stride - pad + k1;
                const int64_t iw = ow * stride - pad + k2;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                dx[((n * C + c) * H + ih) * W + iw] += g * w[((o * C + c) * K + k1) * K + k2];
              }
        }
  return dx;
}

template <typename T>
Tensor<T> conv2d_dweight(const Tensor<T>& dy, const Tensor<T>& x, int64_t K, int64_t stride,
                         int64_t pad) {
  const int64_t N = dy.dim(0), O = dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> dw({O, C, K, K});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          const T g = dy[((n * O + o) * Ho + oh) * Wo + ow];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t k1 = 0; k1 < K; ++k1)
              for (int64_t k2 = 0; k2 < K; ++k2) {
                const int64_t ih = oh * stride - pad + k1;
                const int64_t iw = ow * stride - pad + k2;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                dw[((o * C + c) * K + k1) * K + k2] += g * x[((n * C + c) * H + ih) * W + iw];
              }
        }
  return dw;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y{x.shape()};
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor<T> y({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oh = 0; oh < Ho; ++oh)
        for (int64_t ow = 0; ow < Wo; ++ow) {
          T best = x[((n * C + c) * H + 2 * oh) * W + 2 * ow];
          for (int64_t dh = 0; dh < 2; ++dh)
            for (int64_t dw = 0; dw < 2; ++dw)
              best = std::max(best, x[((n * C + c) * H + 2 * oh + dh) * W + 2 * ow + dw]);
          y[((n * C + c) * Ho + oh) * Wo + ow] = best;
        }
  return y;
}

template <typename T>
T softmax_xent_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  const int64_t N = logits.dim(0), K = logits.dim(1);
  T total{0};
  for (int64_t i = 0; i < N; ++i) {
    T mx = logits[i * K];
    for (int64_t j = 1; j < K; ++j) mx = std::max(mx, logits[i * K + j]);
    T sum{0};
    for (int64_t j = 0; j < K; ++j) sum += std::exp(logits[i * K + j] - mx);
    total += -(logits[i * K + labels[static_cast<size_t>(i)]] - mx - std::log(sum));
  }
  return total / static_cast<T>(N);
}

template <typename T>
Tensor<T> ste_linear_score_grad(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& w) {
  const int64_t N = x.dim(0), In = x.dim(1), Out = dy.dim(1);
  Tensor<T> ds({Out, In});
  for (int64_t o = 0; o < Out; ++o)
    for (int64_t i = 0; i < In; ++i) {
      T acc{0};
      for (int64_t n = 0; n < N; ++n) acc += dy[n * Out + o] * x[n * In + i];
      ds[o * In + i] = w[o * In + i] * acc;
    }
  return ds;
}

template <typename T>
Tensor<T> ste_conv_score_grad(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& w,
                              int64_t stride, int64_t pad) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), K = w.dim(2);
  const int64_t Ho = dy.dim(2), Wo = dy.dim(3);
  Tensor<T> ds({O, C, K, K});
  for (int64_t o = 0; o < O; ++o)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t k1 = 0; k1 < K; ++k1)
        for (int64_t k2 = 0; k2 < K; ++k2) {
          T acc{0};
          for (int64_t n = 0; n < N; ++n)
            for (int64_t oh = 0; oh < Ho; ++oh)
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t ih = oh * stride - pad + k1;
                const int64_t iw = ow * stride - pad + k2;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += dy[((n * O + o) * Ho + oh) * Wo + ow] *
                       x[((n * C + c) * H + ih) * W + iw];
              }
          ds[((o * C + c) * K + k1) * K + k2] = w[((o * C + c) * K + k1) * K + k2] * acc;
        }
  return ds;
}

}  // namespace edgepop::ref
