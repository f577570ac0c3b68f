#pragma once

#include <map>
#include <string>
#include <vector>

#include "segres/networks.hpp"

namespace segres {

enum class TvVariant { Conventional, Literal };
enum class AdversarialForm { LeastSquares, Logistic };

// Weights of the two training objectives: the refinement total is
// adv + lambda_ref * CE, and the synthesis total is
// lambda_l1 * L1 + lambda_adv * adv + lambda_perc * perceptual
// + lambda_style * style + tv_weight * tv.
struct LossWeights {
  double lambda_ref = 10.0;
  double lambda_l1 = 10.0;
  double lambda_adv = 1.0;
  double lambda_perc = 10.0;
  double lambda_style = 250.0;
  double tv_weight = 1.0;

  void validate() const {
    if (lambda_ref < 0 || lambda_l1 < 0 || lambda_adv < 0 || lambda_perc < 0 ||
        lambda_style < 0 || tv_weight < 0)
      throw ConfigError("loss weights must be nonnegative");
  }
};

// Scalar value of every loss term of one iteration, for logging and tests.
struct LossReport {
  std::int64_t iteration = 0;
  int stage = 0;
  double d1 = 0, g1_adv = 0, ref_ce = 0, g1_total = 0;
  double d2 = 0, g2_adv = 0, l1 = 0, perceptual = 0, style = 0, tv = 0, g2_total = 0;

  bool all_finite() const {
    for (double v : {d1, g1_adv, ref_ce, g1_total, d2, g2_adv, l1, perceptual, style, tv, g2_total})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

constexpr double kCrossEntropyEps = 1e-8;

// Mean over pixels of -log p[label]; probabilities clamped at eps from below.
template <typename S>
int cross_entropy_mean(Graph<S>& g, int probs, const Tensor<int>& labels,
                       double eps = kCrossEntropyEps) {
  const Tensor<S>& tp = g.value(probs);
  if (labels.n != tp.n || labels.h != tp.h || labels.w != tp.w || labels.c != 1)
    throw ShapeError("cross_entropy: labels " + labels.shape_str() + " vs probs " + tp.shape_str());
  const std::int64_t plane = tp.plane_size();
  const std::int64_t count = std::int64_t(tp.n) * plane;
  double acc = 0.0;
  for (int in = 0; in < tp.n; ++in) {
    const int* lab = labels.plane(in, 0);
    for (std::int64_t p = 0; p < plane; ++p) {
      const int cls = lab[p];
      if (cls < 0 || cls >= tp.c) throw RangeError("cross_entropy: label >= K");
      acc -= std::log(std::max(double(tp.plane(in, cls)[p]), eps));
    }
  }
  Tensor<int> labs = labels;
  return g.emplace(Tensor<S>::scalar(S(acc / double(count))), g.needs_grad(probs),
                   [probs, labs, eps, count](Graph<S>& gg, int self) {
                     const S go = gg.grad(self).data[0];
                     auto& gp = gg.grad(probs);
                     const Tensor<S>& tp = gg.value(probs);
                     const std::int64_t plane = tp.plane_size();
                     for (int in = 0; in < tp.n; ++in) {
                       const int* lab = labs.plane(in, 0);
                       for (std::int64_t p = 0; p < plane; ++p) {
                         const double pv = double(tp.plane(in, lab[p])[p]);
                         if (pv > eps)  // clamped pixels sit on the flat part
                           gp.plane(in, lab[p])[p] -= go / S(pv * double(count));
                       }
                     }
                   });
}

// mean |x|
template <typename S>
int abs_mean(Graph<S>& g, int x) {
  const Tensor<S>& tx = g.value(x);
  const double inv = 1.0 / double(tx.size());
  double acc = tx.data.template cast<double>().abs().sum() * inv;
  return g.emplace(Tensor<S>::scalar(S(acc)), g.needs_grad(x), [x, inv](Graph<S>& gg, int self) {
    const S go = gg.grad(self).data[0];
    const auto& tx = gg.value(x);
    gg.grad(x).data += go * S(inv) * tx.data.sign();
  });
}

// mean (x - target)^2
template <typename S>
int squared_error_mean(Graph<S>& g, int x, double target) {
  const Tensor<S>& tx = g.value(x);
  const double inv = 1.0 / double(tx.size());
  double acc = (tx.data.template cast<double>() - target).square().sum() * inv;
  return g.emplace(Tensor<S>::scalar(S(acc)), g.needs_grad(x), [x, target, inv](Graph<S>& gg, int self) {
    const S go = gg.grad(self).data[0];
    const auto& tx = gg.value(x);
    gg.grad(x).data += go * S(2.0 * inv) * (tx.data - S(target));
  });
}

// mean softplus(k * x); the building block of the logistic adversarial form.
template <typename S>
int softplus_mean(Graph<S>& g, int x, double k) {
  const Tensor<S>& tx = g.value(x);
  const double inv = 1.0 / double(tx.size());
  double acc = 0.0;
  for (std::int64_t i = 0; i < tx.size(); ++i) {
    const double z = k * double(tx.data[i]);
    acc += z > 30.0 ? z : std::log1p(std::exp(z));  // overflow guard
  }
  acc *= inv;
  return g.emplace(Tensor<S>::scalar(S(acc)), g.needs_grad(x), [x, k, inv](Graph<S>& gg, int self) {
    const S go = gg.grad(self).data[0];
    const auto& tx = gg.value(x);
    auto& gx = gg.grad(x);
    for (std::int64_t i = 0; i < tx.size(); ++i) {
      const double z = k * double(tx.data[i]);
      gx.data[i] += go * S(k * inv / (1.0 + std::exp(-z)));
    }
  });
}

// Adversarial objectives. Least-squares: d = mean((real-1)^2) + mean(fake^2),
// g = mean((fake-1)^2). Logistic treats scores as logits, with the
// non-saturating generator objective.
template <typename S>
int discriminator_loss(Graph<S>& g, int real_scores, int fake_scores,
                       AdversarialForm form = AdversarialForm::LeastSquares) {
  if (!g.value(real_scores).all_finite() || !g.value(fake_scores).all_finite())
    throw NumericError("discriminator_loss: non-finite score map");
  if (form == AdversarialForm::LeastSquares)
    return add(g, squared_error_mean(g, real_scores, 1.0), squared_error_mean(g, fake_scores, 0.0));
  return add(g, softplus_mean(g, real_scores, -1.0), softplus_mean(g, fake_scores, 1.0));
}

template <typename S>
int generator_adversarial_loss(Graph<S>& g, int fake_scores,
                               AdversarialForm form = AdversarialForm::LeastSquares) {
  if (!g.value(fake_scores).all_finite())
    throw NumericError("generator_adversarial_loss: non-finite score map");
  if (form == AdversarialForm::LeastSquares) return squared_error_mean(g, fake_scores, 1.0);
  return softplus_mean(g, fake_scores, -1.0);
}

template <typename S>
struct AdversarialPair {
  int d_loss, g_loss;
};

template <typename S>
AdversarialPair<S> ls_adversarial_losses(Graph<S>& g, int real_scores, int fake_scores) {
  return {discriminator_loss(g, real_scores, fake_scores, AdversarialForm::LeastSquares),
          generator_adversarial_loss(g, fake_scores, AdversarialForm::LeastSquares)};
}

template <typename S>
int l1_loss(Graph<S>& g, int a, int b) {
  return abs_mean(g, sub(g, a, b));
}

// Sum over tapped layers of mean |phi_i(a) - phi_i(b)|.
template <typename S>
int perceptual_loss(Graph<S>& g, FeatureExtractor<S>& f, int a, int b) {
  auto ta = f.taps(g, a);
  auto tb = f.taps(g, b);
  std::vector<int> terms;
  for (std::size_t i = 0; i < ta.size(); ++i) terms.push_back(abs_mean(g, sub(g, ta[i], tb[i])));
  return add_scalars(g, terms, std::vector<double>(terms.size(), 1.0));
}

// Per-sample Gram matrix of CHW features: G = F F^T / (C*H*W) with F the
// C x (H*W) flattening. Output shape (n, C, C, 1).
template <typename S>
int gram_matrix(Graph<S>& g, int x) {
  const Tensor<S>& tx = g.value(x);
  const int C = tx.c;
  const std::int64_t hw = tx.plane_size();
  const double norm = 1.0 / (double(C) * double(hw));
  Tensor<S> out(tx.n, C, C, 1);
  for (int in = 0; in < tx.n; ++in) {
    Eigen::Map<const detail::MatrixRM<S>> F(tx.plane(in, 0), C, hw);
    Eigen::Map<detail::MatrixRM<S>> G(out.plane(in, 0), C, C);
    G.noalias() = (F * F.transpose()) * S(norm);
  }
  return g.emplace(std::move(out), g.needs_grad(x), [x, norm](Graph<S>& gg, int self) {
    const Tensor<S>& go = gg.grad(self);
    const Tensor<S>& tx = gg.value(x);
    auto& gx = gg.grad(x);
    const int C = tx.c;
    const std::int64_t hw = tx.plane_size();
    for (int in = 0; in < tx.n; ++in) {
      Eigen::Map<const detail::MatrixRM<S>> F(tx.plane(in, 0), C, hw);
      Eigen::Map<const detail::MatrixRM<S>> dG(go.plane(in, 0), C, C);
      Eigen::Map<detail::MatrixRM<S>> dF(gx.plane(in, 0), C, hw);
      dF.noalias() += S(norm) * ((dG + dG.transpose()) * F);
    }
  });
}

// Sum over tapped layers of mean |Gram(phi_j(a)) - Gram(phi_j(b))|.
template <typename S>
int style_loss(Graph<S>& g, FeatureExtractor<S>& f, int a, int b) {
  auto ta = f.taps(g, a);
  auto tb = f.taps(g, b);
  std::vector<int> terms;
  for (std::size_t i = 0; i < ta.size(); ++i)
    terms.push_back(abs_mean(g, sub(g, gram_matrix(g, ta[i]), gram_matrix(g, tb[i]))));
  return add_scalars(g, terms, std::vector<double>(terms.size(), 1.0));
}

// Total variation. Conventional: mean |forward dx| + mean |forward dy| over
// their valid regions. Literal: mean |dx - dy| on the common valid region,
// the form the synthesis objective is typeset with.
template <typename S>
int tv_loss(Graph<S>& g, int x, TvVariant variant = TvVariant::Conventional) {
  const Tensor<S>& tx = g.value(x);
  if (tx.h < 2 || tx.w < 2) throw ShapeError("tv_loss: needs H, W >= 2, got " + tx.shape_str());
  const int H = tx.h, W = tx.w;

  if (variant == TvVariant::Conventional) {
    const std::int64_t nx = std::int64_t(tx.n) * tx.c * H * (W - 1);
    const std::int64_t ny = std::int64_t(tx.n) * tx.c * (H - 1) * W;
    double ax = 0.0, ay = 0.0;
    for (int in = 0; in < tx.n; ++in)
      for (int c = 0; c < tx.c; ++c) {
        const S* p = tx.plane(in, c);
        for (int hh = 0; hh < H; ++hh)
          for (int ww = 0; ww + 1 < W; ++ww) ax += std::abs(double(p[hh * W + ww + 1] - p[hh * W + ww]));
        for (int hh = 0; hh + 1 < H; ++hh)
          for (int ww = 0; ww < W; ++ww) ay += std::abs(double(p[(hh + 1) * W + ww] - p[hh * W + ww]));
      }
    double value = ax / double(nx) + ay / double(ny);
    return g.emplace(Tensor<S>::scalar(S(value)), g.needs_grad(x), [x, nx, ny](Graph<S>& gg, int self) {
      const S go = gg.grad(self).data[0];
      const Tensor<S>& tx = gg.value(x);
      auto& gx = gg.grad(x);
      const int H = tx.h, W = tx.w;
      const S wx = go / S(double(nx)), wy = go / S(double(ny));
      for (int in = 0; in < tx.n; ++in)
        for (int c = 0; c < tx.c; ++c) {
          const S* p = tx.plane(in, c);
          S* dp = gx.plane(in, c);
          for (int hh = 0; hh < H; ++hh)
            for (int ww = 0; ww + 1 < W; ++ww) {
              S d = p[hh * W + ww + 1] - p[hh * W + ww];
              S s = d > S(0) ? wx : (d < S(0) ? -wx : S(0));
              dp[hh * W + ww + 1] += s;
              dp[hh * W + ww] -= s;
            }
          for (int hh = 0; hh + 1 < H; ++hh)
            for (int ww = 0; ww < W; ++ww) {
              S d = p[(hh + 1) * W + ww] - p[hh * W + ww];
              S s = d > S(0) ? wy : (d < S(0) ? -wy : S(0));
              dp[(hh + 1) * W + ww] += s;
              dp[hh * W + ww] -= s;
            }
        }
    });
  }

  // Literal: |dx - dy| where both differences exist.
  const std::int64_t nd = std::int64_t(tx.n) * tx.c * (H - 1) * (W - 1);
  double acc = 0.0;
  for (int in = 0; in < tx.n; ++in)
    for (int c = 0; c < tx.c; ++c) {
      const S* p = tx.plane(in, c);
      for (int hh = 0; hh + 1 < H; ++hh)
        for (int ww = 0; ww + 1 < W; ++ww) {
          double dx = double(p[hh * W + ww + 1] - p[hh * W + ww]);
          double dy = double(p[(hh + 1) * W + ww] - p[hh * W + ww]);
          acc += std::abs(dx - dy);
        }
    }
  return g.emplace(Tensor<S>::scalar(S(acc / double(nd))), g.needs_grad(x),
                   [x, nd](Graph<S>& gg, int self) {
                     const S go = gg.grad(self).data[0];
                     const Tensor<S>& tx = gg.value(x);
                     auto& gx = gg.grad(x);
                     const int H = tx.h, W = tx.w;
                     const S unit = go / S(double(nd));
                     for (int in = 0; in < tx.n; ++in)
                       for (int c = 0; c < tx.c; ++c) {
                         const S* p = tx.plane(in, c);
                         S* dp = gx.plane(in, c);
                         for (int hh = 0; hh + 1 < H; ++hh)
                           for (int ww = 0; ww + 1 < W; ++ww) {
                             S d = (p[hh * W + ww + 1] - p[hh * W + ww]) -
                                   (p[(hh + 1) * W + ww] - p[hh * W + ww]);
                             S s = d > S(0) ? unit : (d < S(0) ? -unit : S(0));
                             dp[hh * W + ww + 1] += s;
                             dp[(hh + 1) * W + ww] -= s;
                           }
                       }
                   });
}

// L_G1 = adv + lambda_ref * CE.
template <typename S>
int total_g1_loss(Graph<S>& g, const LossWeights& w, int adv, int ref_ce) {
  return add_scalars(g, {adv, ref_ce}, {1.0, w.lambda_ref});
}

// L_G2 = lambda_l1*L1 + lambda_adv*adv + lambda_perc*perc + lambda_style*style + tv_weight*tv.
template <typename S>
int total_g2_loss(Graph<S>& g, const LossWeights& w, int l1, int adv, int perc, int style, int tv) {
  return add_scalars(g, {l1, adv, perc, style, tv},
                     {w.lambda_l1, w.lambda_adv, w.lambda_perc, w.lambda_style, w.tv_weight});
}

}  // namespace segres
