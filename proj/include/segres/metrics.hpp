#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "segres/core.hpp"

namespace segres {

// counts(i, j) = pixels with ground truth i predicted j. Accumulation over a
// dataset is entry-wise addition.
struct ConfusionMatrix {
  Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;
  int num_classes = 0;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k)
      : counts(Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(k, k)),
        num_classes(k) {}

  std::int64_t total() const { return counts.sum(); }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.num_classes != num_classes) throw ClassMismatchError("confusion matrix K mismatch");
    counts += o.counts;
    return *this;
  }
};

struct SegScores {
  double pa = 0, mpa = 0, miou = 0, fwiou = 0;
};

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& gt, int num_classes);
void accumulate_confusion(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

// PA, mPA, mIoU, FWIoU. Classes absent from both prediction and ground truth
// are excluded from the mPA/mIoU means.
SegScores seg_scores(const ConfusionMatrix& cm);

// 10*log10(1/MSE) for [0,1] images; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// dynamic range 1; computed per channel on valid windows, then averaged.
double ssim(const Image& a, const Image& b);

}  // namespace segres
