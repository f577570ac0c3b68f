#pragma once

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <vector>

#include "segres/graph.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace segres {

template <typename S>
struct Param {
  Tensor<S> value;
  Tensor<S> grad;
  bool trainable = true;

  void ensure_grad() {
    if (grad.size() == 0) grad = Tensor<S>::zeros_like(value);
  }
  void zero_grad() {
    if (grad.size() != 0) grad.data.setZero();
  }
};

namespace detail {

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatrixCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// im2col for one sample: column p = flat (c, ki, kj) patch at output pixel p.
template <typename S>
void im2col(const S* src, int in_ch, int h, int w, int k, int stride, int pad, int oh, int ow,
            MatrixCM<S>& col) {
  col.resize(std::int64_t(in_ch) * k * k, std::int64_t(oh) * ow);
  for (int c = 0; c < in_ch; ++c) {
    const S* plane = src + std::int64_t(c) * h * w;
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ki - pad;
          S* dst = col.data() + std::int64_t(oy) * ow * col.rows() + row;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) dst[std::int64_t(ox) * col.rows()] = S(0);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kj - pad;
            dst[std::int64_t(ox) * col.rows()] = (ix < 0 || ix >= w) ? S(0) : plane[iy * w + ix];
          }
        }
      }
  }
}

// Scatter-add of a column matrix back onto the input gradient.
template <typename S>
void col2im_add(const MatrixCM<S>& col, int in_ch, int h, int w, int k, int stride, int pad,
                int oh, int ow, S* dst) {
  for (int c = 0; c < in_ch; ++c) {
    S* plane = dst + std::int64_t(c) * h * w;
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= h) continue;
          const S* src = col.data() + std::int64_t(oy) * ow * col.rows() + row;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += src[std::int64_t(ox) * col.rows()];
          }
        }
      }
  }
}

}  // namespace detail

// 2D convolution with optional spectral normalization of the flattened
// (out_ch x in_ch*k*k) weight matrix, one power-iteration step per update.
template <typename S>
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 3, stride = 1, pad = 1;
  bool use_bias = true;
  bool spectral_norm = false;

  Param<S> weight;  // shape (out_ch, in_ch, k, k)
  Param<S> bias;    // shape (out_ch, 1, 1, 1)
  Tensor<S> sn_u, sn_v;  // power-iteration state, persisted in checkpoints

  void init(int in_channels, int out_channels, int kernel, int stride_, std::mt19937_64& rng,
            bool with_bias = true, bool sn = false) {
    in_ch = in_channels;
    out_ch = out_channels;
    ksize = kernel;
    stride = stride_;
    pad = (kernel - 1) / 2;
    use_bias = with_bias;
    spectral_norm = sn;
    weight.value = Tensor<S>(out_ch, in_ch, ksize, ksize);
    const double fan_in = double(in_ch) * ksize * ksize;
    fill_gaussian(weight.value, rng, std::sqrt(2.0 / fan_in));
    if (use_bias) bias.value = Tensor<S>(out_ch, 1, 1, 1);
    if (spectral_norm) {
      sn_u = Tensor<S>(out_ch, 1, 1, 1);
      fill_gaussian(sn_u, rng, 1.0);
      auto unorm = std::sqrt(double(sn_u.data.template cast<double>().square().sum()));
      sn_u.data /= S(unorm > 0 ? unorm : 1.0);
      sn_v = Tensor<S>(in_ch * ksize * ksize, 1, 1, 1);
      power_iteration_step();  // sane sigma before the first forward
    }
  }

  int rows() const { return out_ch; }
  int cols() const { return in_ch * ksize * ksize; }

  // One power-iteration step on the flattened weight; returns sigma estimate.
  S power_iteration_step() {
    auto W = Eigen::Map<const detail::MatrixRM<S>>(weight.value.data.data(), rows(), cols());
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> u(sn_u.data.data(), rows());
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> v(sn_v.data.data(), cols());
    v.noalias() = W.transpose() * u;
    S vn = v.norm();
    if (vn > S(0)) v /= vn;
    u.noalias() = W * v;
    S un = u.norm();
    if (un > S(0)) u /= un;
    return current_sigma();
  }

  S current_sigma() const {
    auto W = Eigen::Map<const detail::MatrixRM<S>>(weight.value.data.data(), rows(), cols());
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> u(sn_u.data.data(), rows());
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> v(sn_v.data.data(), cols());
    S sigma = u.dot(W * v);
    return sigma > S(1e-8) ? sigma : S(1e-8);
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out{&weight};
    if (use_bias) out.push_back(&bias);
    return out;
  }
};

// Forward + backward of a convolution on the tape. When `update_sn` is set
// and the layer is spectrally normalized, one power-iteration step runs
// before the weight is used.
template <typename S>
int conv2d(Graph<S>& g, int x, Conv2d<S>& layer, bool update_sn = false) {
  const Tensor<S>& tx = g.value(x);
  if (tx.c != layer.in_ch)
    throw ShapeError("conv2d: input has " + std::to_string(tx.c) + " channels, layer expects " +
                     std::to_string(layer.in_ch));
  const int k = layer.ksize, stride = layer.stride, pad = layer.pad;
  const int oh = (tx.h + 2 * pad - k) / stride + 1;
  const int ow = (tx.w + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1)
    throw ShapeError("conv2d: input " + tx.shape_str() + " too small for kernel " + std::to_string(k));

  S sigma = S(1);
  if (layer.spectral_norm) {
    if (update_sn) layer.power_iteration_step();
    sigma = layer.current_sigma();
  }
  // Effective weight snapshot for both passes of this node.
  Tensor<S> w_eff = layer.weight.value;
  if (layer.spectral_norm) w_eff.data /= sigma;

  const int rows = layer.rows(), cols = layer.cols();
  Tensor<S> out(tx.n, layer.out_ch, oh, ow);
  {
    auto W = Eigen::Map<const detail::MatrixRM<S>>(w_eff.data.data(), rows, cols);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int in = 0; in < tx.n; ++in) {
      detail::MatrixCM<S> col;
      detail::im2col(tx.plane(in, 0), layer.in_ch, tx.h, tx.w, k, stride, pad, oh, ow, col);
      Eigen::Map<detail::MatrixRM<S>> y(out.plane(in, 0), rows, std::int64_t(oh) * ow);
      y.noalias() = W * col;
      if (layer.use_bias)
        for (int c = 0; c < layer.out_ch; ++c)
          y.row(c).array() += layer.bias.value.data[c];
    }
  }

  bool ng = g.needs_grad(x) || layer.weight.trainable;
  Conv2d<S>* lp = &layer;
  return g.emplace(std::move(out), ng, [x, lp, w_eff = std::move(w_eff), sigma, k, stride, pad, oh,
                                        ow](Graph<S>& gg, int self) {
    const Tensor<S>& go = gg.grad(self);
    const Tensor<S>& tx = gg.value(x);
    const int rows = lp->rows(), cols = lp->cols();
    const bool want_dx = gg.needs_grad(x);
    const bool want_dw = lp->weight.trainable;
    auto W = Eigen::Map<const detail::MatrixRM<S>>(w_eff.data.data(), rows, cols);

    Tensor<S>* gx = want_dx ? &gg.grad(x) : nullptr;
    // Per-sample weight-gradient slots keep the reduction order fixed
    // regardless of thread scheduling.
    std::vector<detail::MatrixRM<S>> dw_slots;
    if (want_dw) dw_slots.assign(tx.n, detail::MatrixRM<S>::Zero(rows, cols));

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int in = 0; in < tx.n; ++in) {
      detail::MatrixCM<S> col;
      detail::im2col(tx.plane(in, 0), lp->in_ch, tx.h, tx.w, k, stride, pad, oh, ow, col);
      Eigen::Map<const detail::MatrixRM<S>> dy(go.plane(in, 0), rows, std::int64_t(oh) * ow);
      if (want_dw) dw_slots[in].noalias() = dy * col.transpose();
      if (want_dx) {
        detail::MatrixCM<S> dcol(cols, std::int64_t(oh) * ow);
        dcol.noalias() = W.transpose() * dy;
        detail::col2im_add(dcol, lp->in_ch, tx.h, tx.w, k, stride, pad, oh, ow, gx->plane(in, 0));
      }
    }

    if (want_dw) {
      lp->weight.ensure_grad();
      detail::MatrixRM<S> dw_hat = detail::MatrixRM<S>::Zero(rows, cols);
      for (const auto& slot : dw_slots) dw_hat += slot;
      auto dW = Eigen::Map<detail::MatrixRM<S>>(lp->weight.grad.data.data(), rows, cols);
      if (lp->spectral_norm) {
        // W_hat = W / sigma with sigma = u^T W v (u, v frozen):
        // dW = (dW_hat - <dW_hat, W_hat> u v^T) / sigma
        auto What = Eigen::Map<const detail::MatrixRM<S>>(w_eff.data.data(), rows, cols);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> u(lp->sn_u.data.data(), rows);
        Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> v(lp->sn_v.data.data(), cols);
        S inner = (dw_hat.array() * What.array()).sum();
        dW.noalias() += (dw_hat - inner * (u * v.transpose())) / sigma;
      } else {
        dW.noalias() += dw_hat;
      }
      if (lp->use_bias) {
        lp->bias.ensure_grad();
        for (int c = 0; c < rows; ++c) {
          double acc = 0.0;
          for (int in = 0; in < tx.n; ++in) {
            Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> row(go.plane(in, c),
                                                                     std::int64_t(oh) * ow);
            acc += double(row.template cast<double>().sum());
          }
          lp->bias.grad.data[c] += S(acc);
        }
      }
    }
  });
}

// Per-sample, per-channel normalization with learned affine parameters.
template <typename S>
struct InstanceNorm {
  Param<S> gamma, beta;
  S eps = S(1e-5);

  void init(int channels) {
    gamma.value = Tensor<S>(channels, 1, 1, 1);
    gamma.value.data.setConstant(S(1));
    beta.value = Tensor<S>(channels, 1, 1, 1);
  }

  std::vector<Param<S>*> params() { return {&gamma, &beta}; }
};

template <typename S>
int instance_norm(Graph<S>& g, int x, InstanceNorm<S>& layer) {
  const Tensor<S>& tx = g.value(x);
  if (tx.c != int(layer.gamma.value.size()))
    throw ShapeError("instance_norm: channel mismatch");
  const std::int64_t plane = tx.plane_size();
  Tensor<S> out = Tensor<S>::zeros_like(tx);
  Tensor<S> xhat = Tensor<S>::zeros_like(tx);
  Tensor<S> invstd(tx.n, tx.c, 1, 1);
  for (int in = 0; in < tx.n; ++in)
    for (int c = 0; c < tx.c; ++c) {
      Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> xs(tx.plane(in, c), plane);
      S mu = xs.mean();
      S var = (xs - mu).square().mean();
      S is = S(1) / std::sqrt(var + layer.eps);
      invstd.at(in, c, 0, 0) = is;
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> xh(xhat.plane(in, c), plane);
      xh = (xs - mu) * is;
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> ys(out.plane(in, c), plane);
      ys = layer.gamma.value.data[c] * xh + layer.beta.value.data[c];
    }
  bool ng = g.needs_grad(x) || layer.gamma.trainable;
  InstanceNorm<S>* lp = &layer;
  return g.emplace(std::move(out), ng, [x, lp, xhat, invstd](Graph<S>& gg, int self) {
    const Tensor<S>& go = gg.grad(self);
    const std::int64_t plane = go.plane_size();
    const bool want_dx = gg.needs_grad(x);
    Tensor<S>* gx = want_dx ? &gg.grad(x) : nullptr;
    if (lp->gamma.trainable) {
      lp->gamma.ensure_grad();
      lp->beta.ensure_grad();
    }
    for (int in = 0; in < go.n; ++in)
      for (int c = 0; c < go.c; ++c) {
        Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> dy(go.plane(in, c), plane);
        Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> xh(xhat.plane(in, c), plane);
        if (lp->gamma.trainable) {
          lp->gamma.grad.data[c] += (dy * xh).sum();
          lp->beta.grad.data[c] += dy.sum();
        }
        if (want_dx) {
          S gammac = lp->gamma.value.data[c];
          S is = invstd.at(in, c, 0, 0);
          S mean_dy = dy.mean();
          S mean_dyxh = (dy * xh).mean();
          Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> dx(gx->plane(in, c), plane);
          dx += gammac * is * (dy - mean_dy - xh * mean_dyxh);
        }
      }
  });
}

// Adam with fixed learning rate; the de-facto settings of the conditional
// GAN lineage (lr 2e-4, betas 0.5/0.999) are the trainer defaults. Holds only
// the moment slots; the parameter list is passed per call (same order as at
// construction), so owning structs stay freely movable.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<Param<S>*>& params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params) {
      m_.push_back(Tensor<S>::zeros_like(p->value));
      v_.push_back(Tensor<S>::zeros_like(p->value));
    }
  }

  void zero_grad(const std::vector<Param<S>*>& params) {
    for (auto* p : params) p->zero_grad();
  }

  void step(const std::vector<Param<S>*>& params) {
    if (params.size() != m_.size()) throw ShapeError("Adam::step: parameter count mismatch");
    ++t_;
    const S bc1 = S(1) - S(std::pow(beta1_, double(t_)));
    const S bc2 = S(1) - S(std::pow(beta2_, double(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<S>* p = params[i];
      if (p->grad.size() == 0) continue;
      m_[i].data = S(beta1_) * m_[i].data + S(1 - beta1_) * p->grad.data;
      v_[i].data = S(beta2_) * v_[i].data + S(1 - beta2_) * p->grad.data.square();
      p->value.data -= S(lr_) * (m_[i].data / bc1) / ((v_[i].data / bc2).sqrt() + S(eps_));
    }
  }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  std::vector<Tensor<S>>& moment1() { return m_; }
  std::vector<Tensor<S>>& moment2() { return v_; }

 private:
  double lr_ = 2e-4, beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace segres
