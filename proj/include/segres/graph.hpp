#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "segres/tensor.hpp"

namespace segres {

// Reverse-mode tape. Each op appends a node holding its output value and a
// closure that scatters the node's gradient back into its inputs. backward()
// walks the tape in reverse creation order, which is a valid topological
// order by construction. Tapes are built per training step and discarded.
template <typename S>
class Graph {
 public:
  // Closure signature: (graph, id of this node).
  using Backprop = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    Backprop backprop;
    bool needs_grad = false;
  };

  int leaf(Tensor<S> value, bool needs_grad = false) {
    return emplace(std::move(value), needs_grad, nullptr);
  }

  int emplace(Tensor<S> value, bool needs_grad, Backprop backprop) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return int(nodes_.size()) - 1;
  }

  const Tensor<S>& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Gradient buffer, allocated zeroed on first touch.
  Tensor<S>& grad(int id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0) node.grad = Tensor<S>::zeros_like(node.value);
    return node.grad;
  }

  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  void backward(int root) {
    if (nodes_[root].value.size() != 1) throw ShapeError("backward() root must be scalar");
    if (!nodes_[root].value.all_finite()) throw NumericError("backward() on non-finite loss");
    grad(root).data.setConstant(S(1));
    for (int i = root; i >= 0; --i) {
      Node& node = nodes_[i];
      if (node.needs_grad && node.backprop && node.grad.size() != 0) node.backprop(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise / structural ops. Convolution and normalization layers live in
// layers.hpp; loss reductions in losses.hpp.

template <typename S>
int add(Graph<S>& g, int a, int b) {
  const auto& ta = g.value(a);
  const auto& tb = g.value(b);
  if (!ta.same_shape(tb)) throw ShapeError("add: " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor<S> out = ta;
  out.data += tb.data;
  bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.emplace(std::move(out), ng, [a, b](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    if (gg.needs_grad(a)) gg.grad(a).data += go.data;
    if (gg.needs_grad(b)) gg.grad(b).data += go.data;
  });
}

template <typename S>
int sub(Graph<S>& g, int a, int b) {
  const auto& ta = g.value(a);
  const auto& tb = g.value(b);
  if (!ta.same_shape(tb)) throw ShapeError("sub: " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor<S> out = ta;
  out.data -= tb.data;
  bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.emplace(std::move(out), ng, [a, b](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    if (gg.needs_grad(a)) gg.grad(a).data += go.data;
    if (gg.needs_grad(b)) gg.grad(b).data -= go.data;
  });
}

template <typename S>
int scale(Graph<S>& g, int x, double k) {
  Tensor<S> out = g.value(x);
  out.data *= S(k);
  return g.emplace(std::move(out), g.needs_grad(x), [x, k](Graph<S>& gg, int self) {
    gg.grad(x).data += S(k) * gg.grad(self).data;
  });
}

template <typename S>
int add_const(Graph<S>& g, int x, double k) {
  Tensor<S> out = g.value(x);
  out.data += S(k);
  return g.emplace(std::move(out), g.needs_grad(x), [x](Graph<S>& gg, int self) {
    gg.grad(x).data += gg.grad(self).data;
  });
}

// y = s * x where s is a one-element variable (used by tiny test generators).
template <typename S>
int scalar_scale(Graph<S>& g, int s, int x) {
  if (g.value(s).size() != 1) throw ShapeError("scalar_scale: scale operand must be scalar");
  S sj = g.value(s).data[0];
  Tensor<S> out = g.value(x);
  out.data *= sj;
  bool ng = g.needs_grad(s) || g.needs_grad(x);
  return g.emplace(std::move(out), ng, [s, x, sj](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    if (gg.needs_grad(s)) gg.grad(s).data[0] += (go.data * gg.value(x).data).sum();
    if (gg.needs_grad(x)) gg.grad(x).data += sj * go.data;
  });
}

template <typename S>
int leaky_relu(Graph<S>& g, int x, double slope = 0.2) {
  const auto& tx = g.value(x);
  Tensor<S> out = tx;
  out.data = (tx.data > S(0)).select(tx.data, S(slope) * tx.data);
  return g.emplace(std::move(out), g.needs_grad(x), [x, slope](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    const auto& tx = gg.value(x);
    gg.grad(x).data += (tx.data > S(0)).select(go.data, S(slope) * go.data);
  });
}

template <typename S>
int relu(Graph<S>& g, int x) {
  return leaky_relu(g, x, 0.0);
}

template <typename S>
int sigmoid(Graph<S>& g, int x) {
  const auto& tx = g.value(x);
  Tensor<S> out = tx;
  out.data = S(1) / (S(1) + (-tx.data).exp());
  Tensor<S> y = out;  // captured for the backward pass
  return g.emplace(std::move(out), g.needs_grad(x), [x, y](Graph<S>& gg, int self) {
    gg.grad(x).data += gg.grad(self).data * y.data * (S(1) - y.data);
  });
}

// Per-pixel softmax across channels.
template <typename S>
int softmax_channels(Graph<S>& g, int x) {
  const auto& tx = g.value(x);
  Tensor<S> out = Tensor<S>::zeros_like(tx);
  const int C = tx.c;
  const std::int64_t plane = tx.plane_size();
  for (int in = 0; in < tx.n; ++in) {
    for (std::int64_t p = 0; p < plane; ++p) {
      S mx = tx.plane(in, 0)[p];
      for (int c = 1; c < C; ++c) mx = std::max(mx, tx.plane(in, c)[p]);
      S denom = S(0);
      for (int c = 0; c < C; ++c) denom += std::exp(tx.plane(in, c)[p] - mx);
      for (int c = 0; c < C; ++c) out.plane(in, c)[p] = std::exp(tx.plane(in, c)[p] - mx) / denom;
    }
  }
  Tensor<S> y = out;
  return g.emplace(std::move(out), g.needs_grad(x), [x, y](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    auto& gx = gg.grad(x);
    const int C = y.c;
    const std::int64_t plane = y.plane_size();
    for (int in = 0; in < y.n; ++in) {
      for (std::int64_t p = 0; p < plane; ++p) {
        S dot = S(0);
        for (int c = 0; c < C; ++c) dot += go.plane(in, c)[p] * y.plane(in, c)[p];
        for (int c = 0; c < C; ++c)
          gx.plane(in, c)[p] += y.plane(in, c)[p] * (go.plane(in, c)[p] - dot);
      }
    }
  });
}

// Nearest-neighbour 2x upsample.
template <typename S>
int upsample2x(Graph<S>& g, int x) {
  const auto& tx = g.value(x);
  Tensor<S> out(tx.n, tx.c, tx.h * 2, tx.w * 2);
  for (int in = 0; in < tx.n; ++in)
    for (int c = 0; c < tx.c; ++c) {
      const S* src = tx.plane(in, c);
      S* dst = out.plane(in, c);
      for (int hh = 0; hh < tx.h; ++hh)
        for (int ww = 0; ww < tx.w; ++ww) {
          S v = src[hh * tx.w + ww];
          S* row0 = dst + (2 * hh) * (2 * tx.w) + 2 * ww;
          S* row1 = row0 + 2 * tx.w;
          row0[0] = row0[1] = row1[0] = row1[1] = v;
        }
    }
  int sh = tx.h, sw = tx.w;
  return g.emplace(std::move(out), g.needs_grad(x), [x, sh, sw](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    auto& gx = gg.grad(x);
    for (int in = 0; in < gx.n; ++in)
      for (int c = 0; c < gx.c; ++c) {
        const S* src = go.plane(in, c);
        S* dst = gx.plane(in, c);
        for (int hh = 0; hh < sh; ++hh)
          for (int ww = 0; ww < sw; ++ww) {
            const S* row0 = src + (2 * hh) * (2 * sw) + 2 * ww;
            const S* row1 = row0 + 2 * sw;
            dst[hh * sw + ww] += row0[0] + row0[1] + row1[0] + row1[1];
          }
      }
  });
}

// Top-left crop to (h, w); pairs with upsample2x when odd sizes get rounded up.
template <typename S>
int crop_to(Graph<S>& g, int x, int h, int w) {
  const auto& tx = g.value(x);
  if (tx.h == h && tx.w == w) return x;
  if (tx.h < h || tx.w < w) throw ShapeError("crop_to: target larger than input");
  Tensor<S> out(tx.n, tx.c, h, w);
  for (int in = 0; in < tx.n; ++in)
    for (int c = 0; c < tx.c; ++c) {
      const S* src = tx.plane(in, c);
      S* dst = out.plane(in, c);
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww) dst[hh * w + ww] = src[hh * tx.w + ww];
    }
  return g.emplace(std::move(out), g.needs_grad(x), [x, h, w](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    auto& gx = gg.grad(x);
    for (int in = 0; in < gx.n; ++in)
      for (int c = 0; c < gx.c; ++c) {
        const S* src = go.plane(in, c);
        S* dst = gx.plane(in, c);
        for (int hh = 0; hh < h; ++hh)
          for (int ww = 0; ww < w; ++ww) dst[hh * gx.w + ww] += src[hh * w + ww];
      }
  });
}

template <typename S>
int concat_channels(Graph<S>& g, int a, int b) {
  const auto& ta = g.value(a);
  const auto& tb = g.value(b);
  if (ta.n != tb.n || ta.h != tb.h || ta.w != tb.w)
    throw ShapeError("concat_channels: " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor<S> out(ta.n, ta.c + tb.c, ta.h, ta.w);
  const std::int64_t plane = ta.plane_size();
  for (int in = 0; in < ta.n; ++in) {
    for (int c = 0; c < ta.c; ++c)
      std::copy(ta.plane(in, c), ta.plane(in, c) + plane, out.plane(in, c));
    for (int c = 0; c < tb.c; ++c)
      std::copy(tb.plane(in, c), tb.plane(in, c) + plane, out.plane(in, ta.c + c));
  }
  int ca = ta.c, cb = tb.c;
  bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.emplace(std::move(out), ng, [a, b, ca, cb](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    const std::int64_t plane = go.plane_size();
    if (gg.needs_grad(a)) {
      auto& ga = gg.grad(a);
      for (int in = 0; in < go.n; ++in)
        for (int c = 0; c < ca; ++c) {
          const S* src = go.plane(in, c);
          S* dst = ga.plane(in, c);
          for (std::int64_t p = 0; p < plane; ++p) dst[p] += src[p];
        }
    }
    if (gg.needs_grad(b)) {
      auto& gb = gg.grad(b);
      for (int in = 0; in < go.n; ++in)
        for (int c = 0; c < cb; ++c) {
          const S* src = go.plane(in, ca + c);
          S* dst = gb.plane(in, c);
          for (std::int64_t p = 0; p < plane; ++p) dst[p] += src[p];
        }
    }
  });
}

// Cuts the gradient flow: output value aliases x but is a fresh leaf.
template <typename S>
int detach(Graph<S>& g, int x) {
  return g.leaf(g.value(x), false);
}

// Single-channel view (n, 1, h, w) of channel c.
template <typename S>
int slice_channel(Graph<S>& g, int x, int channel) {
  const auto& tx = g.value(x);
  if (channel < 0 || channel >= tx.c) throw ShapeError("slice_channel: channel out of range");
  Tensor<S> out(tx.n, 1, tx.h, tx.w);
  const std::int64_t plane = tx.plane_size();
  for (int in = 0; in < tx.n; ++in)
    std::copy(tx.plane(in, channel), tx.plane(in, channel) + plane, out.plane(in, 0));
  return g.emplace(std::move(out), g.needs_grad(x), [x, channel](Graph<S>& gg, int self) {
    const auto& go = gg.grad(self);
    auto& gx = gg.grad(x);
    const std::int64_t plane = go.plane_size();
    for (int in = 0; in < go.n; ++in) {
      const S* src = go.plane(in, 0);
      S* dst = gx.plane(in, channel);
      for (std::int64_t p = 0; p < plane; ++p) dst[p] += src[p];
    }
  });
}

template <typename S>
int mean_all(Graph<S>& g, int x) {
  const auto& tx = g.value(x);
  const double inv = 1.0 / double(tx.size());
  Tensor<S> out = Tensor<S>::scalar(S(tx.data.template cast<double>().sum() * inv));
  return g.emplace(std::move(out), g.needs_grad(x), [x, inv](Graph<S>& gg, int self) {
    gg.grad(x).data += S(gg.grad(self).data[0] * S(inv));
  });
}

// Weighted sum of scalar variables: sum_i w_i * x_i.
template <typename S>
int add_scalars(Graph<S>& g, const std::vector<int>& xs, const std::vector<double>& weights) {
  if (xs.size() != weights.size()) throw ShapeError("add_scalars: size mismatch");
  double acc = 0.0;
  bool ng = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (g.value(xs[i]).size() != 1) throw ShapeError("add_scalars: non-scalar operand");
    acc += weights[i] * double(g.value(xs[i]).data[0]);
    ng = ng || g.needs_grad(xs[i]);
  }
  std::vector<int> xs_copy = xs;
  std::vector<double> w_copy = weights;
  return g.emplace(Tensor<S>::scalar(S(acc)), ng, [xs_copy, w_copy](Graph<S>& gg, int self) {
    S go = gg.grad(self).data[0];
    for (std::size_t i = 0; i < xs_copy.size(); ++i)
      if (gg.needs_grad(xs_copy[i])) gg.grad(xs_copy[i]).data[0] += S(w_copy[i]) * go;
  });
}

}  // namespace segres
