#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edgepop/kernels.hpp"
#include "edgepop/tensor.hpp"

namespace edgepop {

// Reverse-mode tape. Nodes are appended in execution order, so input ids are
// always smaller than the node that consumes them; backward walks the tape
// once in reverse. Values are computed eagerly at op-creation time.
template <typename T>
class Graph {
 public:
  using Id = int32_t;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Id input(Tensor<T> value, bool trainable = false, std::string name = "") {
    nodes_.push_back(Node{std::move(value), {}, nullptr, trainable, std::move(name)});
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id constant(Tensor<T> value, std::string name = "") {
    return input(std::move(value), false, std::move(name));
  }

  const Tensor<T>& value(Id id) const { return nodes_.at(check(id)).value; }
  bool trainable(Id id) const { return nodes_.at(check(id)).trainable; }
  const std::string& name(Id id) const { return nodes_.at(check(id)).name; }
  size_t size() const { return nodes_.size(); }

  Id matmul(Id a, Id b) {
    Tensor<T> y = kernels::matmul(value(a), value(b));
    return emit(std::move(y), {a, b},
                [a, b](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, kernels::matmul_nt(g, gr.value(b)));
                  gr.accum(gs, b, kernels::matmul_tn(gr.value(a), g));
                });
  }

  Id transpose2d(Id a) {
    const Tensor<T>& x = value(a);
    if (x.rank() != 2) throw DimError("transpose2d expects rank-2");
    return emit(transposed(x), {a},
                [a](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, transposed(g));
                });
  }

  Id conv2d(Id x, Id w, int64_t stride, int64_t pad) {
    Tensor<T> y = kernels::conv2d(value(x), value(w), stride, pad);
    return emit(std::move(y), {x, w},
                [x, w, stride, pad](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  const Tensor<T>& xin = gr.value(x);
                  gr.accum(gs, x, kernels::conv2d_dinput(g, gr.value(w), stride, pad,
                                                         xin.dim(2), xin.dim(3)));
                  gr.accum(gs, w, kernels::conv2d_dweight(g, xin, gr.value(w).dim(2), stride, pad));
                });
  }

  Id relu(Id a) {
    return emit(kernels::relu(value(a)), {a},
                [a](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, kernels::relu_backward(g, gr.value(a)));
                });
  }

  Id abs(Id a) {
    return emit(kernels::map(value(a), [](T v) { return std::abs(v); }), {a},
                [a](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, kernels::zip(g, gr.value(a),
                                               [](T gi, T xi) {
                                                 return gi * static_cast<T>((xi > T{0}) -
                                                                            (xi < T{0}));
                                               },
                                               "abs_backward"));
                });
  }

  Id sigmoid(Id a) {
    Tensor<T> y = kernels::sigmoid(value(a));
    Id id = emit(std::move(y), {a}, nullptr);
    nodes_.back().back = [a, id](const Tensor<T>& g, Graph& gr, Grads& gs) {
      const Tensor<T>& yv = gr.value(id);
      gr.accum(gs, a, kernels::zip(g, yv, [](T gi, T yi) { return gi * yi * (T{1} - yi); },
                                   "sigmoid_backward"));
    };
    return id;
  }

  Id maxpool2(Id a) {
    auto r = kernels::maxpool2(value(a));
    auto argmax = std::move(r.argmax);
    auto in_shape = value(a).shape();
    return emit(std::move(r.y), {a},
                [a, argmax = std::move(argmax), in_shape](const Tensor<T>& g, Graph& gr,
                                                          Grads& gs) {
                  gr.accum(gs, a, kernels::maxpool2_backward(g, argmax, in_shape));
                });
  }

  Id add(Id a, Id b) {
    return emit(kernels::add(value(a), value(b)), {a, b},
                [a, b](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, g);
                  gr.accum(gs, b, g);
                });
  }

  Id sub(Id a, Id b) {
    return emit(kernels::sub(value(a), value(b)), {a, b},
                [a, b](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, g);
                  gr.accum(gs, b, kernels::scale(g, T{-1}));
                });
  }

  Id mul(Id a, Id b) {
    return emit(kernels::mul(value(a), value(b)), {a, b},
                [a, b](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, kernels::mul(g, gr.value(b)));
                  gr.accum(gs, b, kernels::mul(g, gr.value(a)));
                });
  }

  Id reshape(Id a, std::vector<int64_t> shape) {
    auto in_shape = value(a).shape();
    return emit(value(a).reshaped(shape), {a},
                [a, in_shape](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, a, g.reshaped(in_shape));
                });
  }

  Id flatten2(Id a) {
    const Tensor<T>& x = value(a);
    return reshape(a, {x.dim(0), x.numel() / x.dim(0)});
  }

  Id sum(Id a) {
    Tensor<T> y({1});
    y[0] = kernels::sum(value(a));
    return emit(std::move(y), {a},
                [a](const Tensor<T>& g, Graph& gr, Grads& gs) {
                  Tensor<T> dx{gr.value(a).shape()};
                  dx.fill(g[0]);
                  gr.accum(gs, a, std::move(dx));
                });
  }

  Id cross_entropy(Id logits, std::vector<int> labels) {
    auto r = kernels::softmax_xent(value(logits), labels);
    Tensor<T> y({1});
    y[0] = r.loss;
    auto probs = std::move(r.probs);
    return emit(std::move(y), {logits},
                [logits, probs = std::move(probs), labels = std::move(labels)](
                    const Tensor<T>& g, Graph& gr, Grads& gs) {
                  gr.accum(gs, logits, kernels::softmax_xent_backward(probs, labels, g[0]));
                });
  }

  // Gradients of the scalar at `loss` w.r.t. every trainable leaf. Frozen and
  // intermediate tensors get no entry.
  std::unordered_map<Id, Tensor<T>> backward(Id loss) {
    if (value(loss).numel() != 1) throw GraphError("backward requires a scalar output");
    Grads grads(nodes_.size());
    grads[static_cast<size_t>(loss)] = Tensor<T>({1}, T{1});
    for (Id id = loss; id >= 0; --id) {
      Node& node = nodes_[static_cast<size_t>(id)];
      if (grads[static_cast<size_t>(id)].numel() == 0) {
        continue;  // not on any path to the loss
      }
      if (node.back) node.back(grads[static_cast<size_t>(id)], *this, grads);
    }
    std::unordered_map<Id, Tensor<T>> out;
    for (Id id = 0; id < static_cast<Id>(nodes_.size()); ++id) {
      if (nodes_[static_cast<size_t>(id)].trainable &&
          grads[static_cast<size_t>(id)].numel() != 0) {
        out.emplace(id, std::move(grads[static_cast<size_t>(id)]));
      }
    }
    return out;
  }

 private:
  using Grads = std::vector<Tensor<T>>;
  using BackFn = std::function<void(const Tensor<T>&, Graph&, Grads&)>;

  struct Node {
    Tensor<T> value;
    std::vector<Id> inputs;
    BackFn back;
    bool trainable = false;
    std::string name;
  };

  Id check(Id id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
      throw GraphError("node reference " + std::to_string(id) +
                       " out of range (cycle or dangling id)");
    }
    return id;
  }

  Id emit(Tensor<T> value, std::vector<Id> inputs, BackFn back) {
    const Id next = static_cast<Id>(nodes_.size());
    for (Id in : inputs) {
      if (check(in) >= next) throw GraphError("op input would form a cycle");
    }
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(back), false, ""});
    return next;
  }

  void accum(Grads& grads, Id id, Tensor<T> delta) {
    Tensor<T>& slot = grads[static_cast<size_t>(check(id))];
    if (slot.numel() == 0) {
      slot = std::move(delta);
    } else {
      kernels::accumulate(slot, delta);
    }
  }

  static Tensor<T> transposed(const Tensor<T>& x) {
    const int64_t r = x.dim(0), c = x.dim(1);
    Tensor<T> y({c, r});
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
    return y;
  }

  std::vector<Node> nodes_;
};

}  // namespace edgepop
