#include "segres/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace segres {

void accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw ShapeError("confusion_matrix: prediction/ground-truth shape mismatch");
  for (int hh = 0; hh < gt.height(); ++hh)
    for (int ww = 0; ww < gt.width(); ++ww) {
      const int p = pred.data(hh, ww), t = gt.data(hh, ww);
      if (p < 0 || p >= cm.num_classes || t < 0 || t >= cm.num_classes)
        throw RangeError("confusion_matrix: label outside {0..K-1}");
      ++cm.counts(t, p);
    }
}

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  ConfusionMatrix cm(num_classes);
  accumulate_confusion(cm, pred, gt);
  return cm;
}

SegScores seg_scores(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw DomainError("seg_scores: empty confusion matrix");
  const int K = cm.num_classes;
  std::vector<double> row(K), col(K);
  double trace = 0;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      row[i] += double(cm.counts(i, j));
      col[j] += double(cm.counts(i, j));
    }
    trace += double(cm.counts(i, i));
  }
  SegScores s;
  s.pa = trace / double(total);
  double mpa_sum = 0, miou_sum = 0, fwiou = 0;
  int mpa_n = 0, miou_n = 0;
  for (int i = 0; i < K; ++i) {
    const double tp = double(cm.counts(i, i));
    if (row[i] > 0) {
      mpa_sum += tp / row[i];
      ++mpa_n;
    }
    const double uni = row[i] + col[i] - tp;
    if (uni > 0) {
      const double iou = tp / uni;
      miou_sum += iou;
      ++miou_n;
      fwiou += (row[i] / double(total)) * iou;
    }
  }
  s.mpa = mpa_n > 0 ? mpa_sum / mpa_n : 0.0;
  s.miou = miou_n > 0 ? miou_sum / miou_n : 0.0;
  s.fwiou = fwiou;
  return s;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr: image shape mismatch");
  double se = 0;
  for (int c = 0; c < 3; ++c) se += (a.chan[c] - b.chan[c]).square().sum();
  const double mse = se / (3.0 * a.height * a.width);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

// 11-tap Gaussian window, sigma 1.5, normalized to sum 1.
const std::array<double, 11>& ssim_window() {
  static const std::array<double, 11> w = [] {
    std::array<double, 11> k{};
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
  }();
  return w;
}

// Separable weighted local means over valid windows: output (H-10) x (W-10).
Eigen::ArrayXXd window_filter(const Eigen::ArrayXXd& img) {
  const auto& k = ssim_window();
  const int h = int(img.rows()), w = int(img.cols());
  Eigen::ArrayXXd tmp(h, w - 10);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j + 10 < w; ++j) {
      double acc = 0;
      for (int t = 0; t < 11; ++t) acc += k[t] * img(i, j + t);
      tmp(i, j) = acc;
    }
  Eigen::ArrayXXd out(h - 10, w - 10);
  for (int i = 0; i + 10 < h; ++i)
    for (int j = 0; j + 10 < w; ++j) {
      double acc = 0;
      for (int t = 0; t < 11; ++t) acc += k[t] * tmp(i + t, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("ssim: image shape mismatch");
  if (a.height < 11 || a.width < 11)
    throw ShapeError("ssim: image below the 11x11 window size");
  constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  double acc = 0;
  for (int c = 0; c < 3; ++c) {
    const auto& x = a.chan[c];
    const auto& y = b.chan[c];
    const Eigen::ArrayXXd mu_x = window_filter(x);
    const Eigen::ArrayXXd mu_y = window_filter(y);
    const Eigen::ArrayXXd sigma_x2 = window_filter(x * x) - mu_x * mu_x;
    const Eigen::ArrayXXd sigma_y2 = window_filter(y * y) - mu_y * mu_y;
    const Eigen::ArrayXXd sigma_xy = window_filter(x * y) - mu_x * mu_y;
    const Eigen::ArrayXXd num = (2.0 * mu_x * mu_y + kC1) * (2.0 * sigma_xy + kC2);
    const Eigen::ArrayXXd den =
        (mu_x * mu_x + mu_y * mu_y + kC1) * (sigma_x2 + sigma_y2 + kC2);
    acc += (num / den).mean();
  }
  return acc / 3.0;
}

}  // namespace segres
