#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "edgepop/tensor.hpp"

// OpenMP-parallel kernels. Every loop nest parallelizes over output elements
// only, so results are bitwise identical for any thread count. Serial
// reference implementations with the same contracts live in
// edgepop/reference.hpp and are used by the tests and the benchmark.
namespace edgepop::kernels {

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  const int64_t span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw DimError("conv output extent not integral: in=" + std::to_string(in) +
                   " k=" + std::to_string(k) + " stride=" + std::to_string(stride) +
                   " pad=" + std::to_string(pad));
  }
  return span / stride + 1;
}

template <typename T>
void check_matmul(const Tensor<T>& a, const Tensor<T>& b, size_t a_inner, size_t b_inner) {
  if (a.rank() != 2 || b.rank() != 2) throw DimError("matmul expects rank-2 tensors");
  if (a.dim(a_inner) != b.dim(b_inner)) {
    throw DimError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
  }
}

// c[m,n] = a[m,p] * b[p,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_matmul(a, b, 1, 0);
  const int64_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (int64_t k = 0; k < p; ++k) {
      const T av = pa[i * p + k];
      const T* brow = pb + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// c[m,n] = a[m,p] * b[n,p]^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  check_matmul(a, b, 1, 1);
  const int64_t m = a.dim(0), p = a.dim(1), n = b.dim(0);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = pa + i * p;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = pb + j * p;
      T acc{0};
      for (int64_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
      pc[i * n + j] = acc;
    }
  }
  return c;
}

// c[m,n] = a[p,m]^T * b[p,n]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  check_matmul(a, b, 0, 0);
  const int64_t p = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (int64_t k = 0; k < p; ++k) {
      const T av = pa[k * m + i];
      const T* brow = pb + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, int64_t stride) {
  if (x.rank() != 4 || w.rank() != 4) throw DimError("conv2d expects NCHW input and OCKK weight");
  if (x.dim(1) != w.dim(1)) {
    throw DimError("conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " +
                   shape_str(w.shape()));
  }
  if (w.dim(2) != w.dim(3)) throw DimError("conv2d kernel must be square");
  if (w.dim(2) % 2 == 0) throw DimError("conv2d kernel size must be odd");
  if (stride < 1) throw ParamError("conv2d stride must be >= 1");
}

// Cross-correlation with implicit zero padding. x:[N,C,H,W] w:[O,C,k,k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int64_t stride, int64_t pad) {
  check_conv_args(x, w, stride);
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), K = w.dim(2);
  const int64_t Ho = conv_out_extent(H, K, stride, pad);
  const int64_t Wo = conv_out_extent(W, K, stride, pad);
  Tensor<T> y({N, O, Ho, Wo});
  const T* px = x.data();
  const T* pw = w.data();
  T* py = y.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t o = 0; o < O; ++o) {
      T* yplane = py + (n * O + o) * Ho * Wo;
      for (int64_t c = 0; c < C; ++c) {
        const T* xplane = px + (n * C + c) * H * W;
        const T* wplane = pw + (o * C + c) * K * K;
        for (int64_t k1 = 0; k1 < K; ++k1) {
          for (int64_t k2 = 0; k2 < K; ++k2) {
            const T wv = wplane[k1 * K + k2];
            if (wv == T{0}) continue;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + k1;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xplane + ih * W;
              T* yrow = yplane + oh * Wo;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + k2;
                if (iw < 0 || iw >= W) continue;
                yrow[ow] += wv * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_dinput(const Tensor<T>& dy, const Tensor<T>& w, int64_t stride, int64_t pad,
                        int64_t H, int64_t W) {
  const int64_t N = dy.dim(0), O = dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  const int64_t C = w.dim(1), K = w.dim(2);
  Tensor<T> dx({N, C, H, W});
  const T* pdy = dy.data();
  const T* pw = w.data();
  T* pdx = dx.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      T* dxplane = pdx + (n * C + c) * H * W;
      for (int64_t o = 0; o < O; ++o) {
        const T* dyplane = pdy + (n * O + o) * Ho * Wo;
        const T* wplane = pw + (o * C + c) * K * K;
        for (int64_t k1 = 0; k1 < K; ++k1) {
          for (int64_t k2 = 0; k2 < K; ++k2) {
            const T wv = wplane[k1 * K + k2];
            if (wv == T{0}) continue;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + k1;
              if (ih < 0 || ih >= H) continue;
              const T* dyrow = dyplane + oh * Wo;
              T* dxrow = dxplane + ih * W;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + k2;
                if (iw < 0 || iw >= W) continue;
                dxrow[iw] += wv * dyrow[ow];
              }
            }
          }
        }
      }
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
  const T* pdy = dy.data();
  const T* px = x.data();
  T* pdw = dw.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t o = 0; o < O; ++o) {
    for (int64_t c = 0; c < C; ++c) {
      T* dwplane = pdw + (o * C + c) * K * K;
      for (int64_t n = 0; n < N; ++n) {
        const T* dyplane = pdy + (n * O + o) * Ho * Wo;
        const T* xplane = px + (n * C + c) * H * W;
        for (int64_t k1 = 0; k1 < K; ++k1) {
          for (int64_t k2 = 0; k2 < K; ++k2) {
            T acc{0};
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + k1;
              if (ih < 0 || ih >= H) continue;
              const T* dyrow = dyplane + oh * Wo;
              const T* xrow = xplane + ih * W;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + k2;
                if (iw < 0 || iw >= W) continue;
                acc += dyrow[ow] * xrow[iw];
              }
            }
            dwplane[k1 * K + k2] += acc;
          }
        }
      }
    }
  }
  return dw;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y{x.shape()};
  const T* px = x.data();
  T* py = y.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) py[i] = px[i] > T{0} ? px[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& x) {
  if (!dy.same_shape(x)) throw DimError("relu_backward shape mismatch");
  Tensor<T> dx{x.shape()};
  const T* pdy = dy.data();
  const T* px = x.data();
  T* pdx = dx.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) pdx[i] = px[i] > T{0} ? pdy[i] : T{0};
  return dx;
}

template <typename T>
struct Pool2Result {
  Tensor<T> y;
  std::vector<int64_t> argmax;  // flat index into the input tensor
};

// 2x2 stride-2 max pooling; odd trailing rows/cols are dropped. Ties pick the
// first element in scan order, which keeps the backward route deterministic.
template <typename T>
Pool2Result<T> maxpool2(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimError("maxpool2 expects NCHW");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H / 2, Wo = W / 2;
  if (Ho < 1 || Wo < 1) throw DimError("maxpool2 input too small: " + shape_str(x.shape()));
  Pool2Result<T> r{Tensor<T>({N, C, Ho, Wo}), std::vector<int64_t>(static_cast<size_t>(N * C * Ho * Wo))};
  const T* px = x.data();
  T* py = r.y.data();
  int64_t* pidx = r.argmax.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const int64_t in_base = (n * C + c) * H * W;
      const int64_t out_base = (n * C + c) * Ho * Wo;
      for (int64_t oh = 0; oh < Ho; ++oh) {
        for (int64_t ow = 0; ow < Wo; ++ow) {
          int64_t best = in_base + (2 * oh) * W + 2 * ow;
          T bv = px[best];
          const int64_t cand[3] = {in_base + (2 * oh) * W + 2 * ow + 1,
                                   in_base + (2 * oh + 1) * W + 2 * ow,
                                   in_base + (2 * oh + 1) * W + 2 * ow + 1};
          for (int64_t idx : cand) {
            if (px[idx] > bv) {
              bv = px[idx];
              best = idx;
            }
          }
          py[out_base + oh * Wo + ow] = bv;
          pidx[out_base + oh * Wo + ow] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const std::vector<int64_t>& argmax,
                            const std::vector<int64_t>& in_shape) {
  Tensor<T> dx{in_shape};
  const T* pdy = dy.data();
  T* pdx = dx.data();
  const int64_t n = dy.numel();
  // Argmax indices are unique per output element and pools do not overlap, so
  // scatter writes never collide.
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) pdx[argmax[static_cast<size_t>(i)]] += pdy[i];
  return dx;
}

template <typename T>
struct XentResult {
  T loss;             // mean over the batch
  Tensor<T> probs;    // softmax(logits)
};

inline void check_labels(const std::vector<int>& labels, int64_t classes, int64_t batch) {
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw DimError("label count " + std::to_string(labels.size()) + " != batch " +
                   std::to_string(batch));
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) {
      throw DataError("label " + std::to_string(l) + " out of range [0," +
                      std::to_string(classes) + ")");
    }
  }
}

// Mean negative log-softmax likelihood.
template <typename T>
XentResult<T> softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw DimError("cross_entropy expects [N,classes] logits");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  check_labels(labels, K, N);
  XentResult<T> r{T{0}, Tensor<T>({N, K})};
  const T* pl = logits.data();
  T* pp = r.probs.data();
  std::vector<T> row_loss(static_cast<size_t>(N));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < N; ++i) {
    const T* lrow = pl + i * K;
    T* prow = pp + i * K;
    T mx = lrow[0];
    for (int64_t j = 1; j < K; ++j) mx = std::max(mx, lrow[j]);
    T sum{0};
    for (int64_t j = 0; j < K; ++j) {
      prow[j] = std::exp(lrow[j] - mx);
      sum += prow[j];
    }
    for (int64_t j = 0; j < K; ++j) prow[j] /= sum;
    row_loss[static_cast<size_t>(i)] =
        -(lrow[labels[static_cast<size_t>(i)]] - mx - std::log(sum));
  }
  T total{0};
  for (int64_t i = 0; i < N; ++i) total += row_loss[static_cast<size_t>(i)];
  r.loss = total / static_cast<T>(N);
  return r;
}

template <typename T>
Tensor<T> softmax_xent_backward(const Tensor<T>& probs, const std::vector<int>& labels,
                                T upstream = T{1}) {
  const int64_t N = probs.dim(0), K = probs.dim(1);
  Tensor<T> dl{probs.shape()};
  const T* pp = probs.data();
  T* pd = dl.data();
  const T invn = upstream / static_cast<T>(N);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < N; ++i) {
    const T* prow = pp + i * K;
    T* drow = pd + i * K;
    for (int64_t j = 0; j < K; ++j) drow[j] = prow[j] * invn;
    drow[labels[static_cast<size_t>(i)]] -= invn;
  }
  return dl;
}

// Fused straight-through score gradient for a linear layer:
// ds[o,i] = w[o,i] * sum_n dy[n,o] * x[n,i].
template <typename T>
Tensor<T> ste_linear_score_grad(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& w) {
  const int64_t N = x.dim(0), In = x.dim(1), Out = dy.dim(1);
  if (dy.dim(0) != N || w.dim(0) != Out || w.dim(1) != In) {
    throw DimError("ste_linear_score_grad shape mismatch");
  }
  Tensor<T> ds({Out, In});
  const T* px = x.data();
  const T* pdy = dy.data();
  const T* pw = w.data();
  T* pds = ds.data();
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < Out; ++o) {
    T* dsrow = pds + o * In;
    for (int64_t n = 0; n < N; ++n) {
      const T g = pdy[n * Out + o];
      const T* xrow = px + n * In;
      for (int64_t i = 0; i < In; ++i) dsrow[i] += g * xrow[i];
    }
    const T* wrow = pw + o * In;
    for (int64_t i = 0; i < In; ++i) dsrow[i] *= wrow[i];
  }
  return ds;
}

// Fused straight-through score gradient for a conv layer: the activation-
// times-upstream product is summed over batch and all spatial locations, then
// multiplied by the frozen weight.
template <typename T>
Tensor<T> ste_conv_score_grad(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& w,
                              int64_t stride, int64_t pad) {
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), K = w.dim(2);
  const int64_t Ho = dy.dim(2), Wo = dy.dim(3);
  if (dy.dim(0) != N || dy.dim(1) != O || w.dim(1) != C) {
    throw DimError("ste_conv_score_grad shape mismatch");
  }
  Tensor<T> ds({O, C, K, K});
  const T* px = x.data();
  const T* pdy = dy.data();
  const T* pw = w.data();
  T* pds = ds.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t o = 0; o < O; ++o) {
    for (int64_t c = 0; c < C; ++c) {
      T* dsplane = pds + (o * C + c) * K * K;
      const T* wplane = pw + (o * C + c) * K * K;
      for (int64_t k1 = 0; k1 < K; ++k1) {
        for (int64_t k2 = 0; k2 < K; ++k2) {
          T acc{0};
          for (int64_t n = 0; n < N; ++n) {
            const T* dyplane = pdy + (n * O + o) * Ho * Wo;
            const T* xplane = px + (n * C + c) * H * W;
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + k1;
              if (ih < 0 || ih >= H) continue;
              const T* dyrow = dyplane + oh * Wo;
              const T* xrow = xplane + ih * W;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + k2;
                if (iw < 0 || iw >= W) continue;
                acc += dyrow[ow] * xrow[iw];
              }
            }
          }
          dsplane[k1 * K + k2] = wplane[k1 * K + k2] * acc;
        }
      }
    }
  }
  return ds;
}

// g *= sign(s), elementwise; sign(0) = 0. This is the chain-rule factor of
// ranking stored signed scores by magnitude: the straight-through gradient
// lands on |s| and reaches the raw score through d|s|/ds.
template <typename T>
void chain_sign(Tensor<T>& g, const Tensor<T>& s) {
  if (!g.same_shape(s)) throw DimError("chain_sign shape mismatch");
  T* pg = g.data();
  const T* ps = s.data();
  const int64_t n = g.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    pg[i] *= static_cast<T>((ps[i] > T{0}) - (ps[i] < T{0}));
  }
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> y{x.shape()};
  const T* px = x.data();
  T* py = y.data();
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) py[i] = f(px[i]);
  return y;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* what) {
  if (!a.same_shape(b)) throw DimError(std::string(what) + " shape mismatch");
  Tensor<T> y{a.shape()};
  const T* pa = a.data();
  const T* pb = b.data();
  T* py = y.data();
  const int64_t n = a.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) py[i] = f(pa[i], pb[i]);
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x + y; }, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map(a, [s](T x) { return x * s; });
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return map(a, [](T x) { return T{1} / (T{1} + std::exp(-x)); });
}

template <typename T>
T sum(const Tensor<T>& a) {
  // Serial reduction: deterministic regardless of thread count.
  T acc{0};
  const T* p = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += p[i];
  return acc;
}

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& from) {
  if (!into.same_shape(from)) throw DimError("accumulate shape mismatch");
  T* pa = into.data();
  const T* pb = from.data();
  const int64_t n = into.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) pa[i] += pb[i];
}

}  // namespace edgepop::kernels
