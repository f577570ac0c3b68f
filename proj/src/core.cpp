#include "segres/core.hpp"

#include <cmath>
#include <string>

namespace segres {

void validate_image(const Image& img, const char* name) {
  if (img.height < kMinImageSize || img.width < kMinImageSize)
    throw ShapeError(std::string(name) + ": size " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + " below minimum " + std::to_string(kMinImageSize));
  for (int ci = 0; ci < 3; ++ci) {
    const auto& c = img.chan[ci];
    if (int(c.rows()) != img.height || int(c.cols()) != img.width)
      throw ShapeError(std::string(name) + ": channel " + std::to_string(ci) + " shape mismatch");
    if (!c.isFinite().all())
      throw RangeError(std::string(name) + ": non-finite pixel in channel " + std::to_string(ci));
    if ((c < 0.0).any() || (c > 1.0).any())
      throw RangeError(std::string(name) + ": pixel outside [0,1] in channel " + std::to_string(ci));
  }
}

void validate_labels(const LabelMap& labels, const char* name) {
  if (labels.num_classes <= 0) throw RangeError(std::string(name) + ": non-positive class count");
  for (int hh = 0; hh < labels.height(); ++hh)
    for (int ww = 0; ww < labels.width(); ++ww) {
      int v = labels.data(hh, ww);
      if (v < 0 || v >= labels.num_classes)
        throw RangeError(std::string(name) + ": label " + std::to_string(v) + " at pixel (" +
                         std::to_string(hh) + "," + std::to_string(ww) + ") outside {0.." +
                         std::to_string(labels.num_classes - 1) + "}");
    }
}

void validate_soft(const SoftLabelMap& soft, const char* name) {
  if (soft.num_classes <= 0 || int(soft.chan.size()) != soft.num_classes)
    throw RangeError(std::string(name) + ": class count / channel mismatch");
  const int h = soft.height(), w = soft.width();
  for (const auto& c : soft.chan) {
    if (int(c.rows()) != h || int(c.cols()) != w)
      throw ShapeError(std::string(name) + ": ragged channel shapes");
    if (!c.isFinite().all() || (c < 0.0).any())
      throw RangeError(std::string(name) + ": negative or non-finite probability");
  }
  Eigen::ArrayXXd sums = Eigen::ArrayXXd::Zero(h, w);
  for (const auto& c : soft.chan) sums += c;
  if (((sums - 1.0).abs() > kSoftSumTolerance).any())
    throw RangeError(std::string(name) + ": per-pixel probabilities do not sum to 1");
}

SoftLabelMap encode_labels(const LabelMap& labels, int num_classes) {
  if (num_classes <= 0) throw DomainError("encode_labels: non-positive class count");
  const int h = labels.height(), w = labels.width();
  SoftLabelMap soft(h, w, num_classes);
  for (int hh = 0; hh < h; ++hh)
    for (int ww = 0; ww < w; ++ww) {
      int v = labels.data(hh, ww);
      if (v < 0 || v >= num_classes)
        throw RangeError("encode_labels: label " + std::to_string(v) + " at pixel (" +
                         std::to_string(hh) + "," + std::to_string(ww) + ") >= K=" +
                         std::to_string(num_classes));
      soft.chan[v](hh, ww) = 1.0;
    }
  return soft;
}

LabelMap decode_labels(const SoftLabelMap& soft) {
  validate_soft(soft);
  const int h = soft.height(), w = soft.width();
  LabelMap labels(h, w, soft.num_classes);
  for (int hh = 0; hh < h; ++hh)
    for (int ww = 0; ww < w; ++ww) {
      int best = 0;
      double best_p = soft.chan[0](hh, ww);
      for (int k = 1; k < soft.num_classes; ++k) {
        double p = soft.chan[k](hh, ww);
        if (p > best_p) {  // strict: ties keep the lowest index
          best_p = p;
          best = k;
        }
      }
      labels.data(hh, ww) = best;
    }
  return labels;
}

const QuadrupleSample& validate_sample(const QuadrupleSample& sample) {
  validate_image(sample.degraded, "degraded");
  validate_image(sample.gt_image, "gt_image");
  validate_labels(sample.degraded_seg, "degraded_seg");
  validate_labels(sample.gt_seg, "gt_seg");
  const int h = sample.gt_image.height, w = sample.gt_image.width;
  if (sample.degraded.height != h || sample.degraded.width != w)
    throw ShapeError("sample: degraded image shape differs from gt_image");
  if (sample.degraded_seg.height() != h || sample.degraded_seg.width() != w)
    throw ShapeError("sample: degraded_seg shape differs from gt_image");
  if (sample.gt_seg.height() != h || sample.gt_seg.width() != w)
    throw ShapeError("sample: gt_seg shape differs from gt_image");
  if (sample.degraded_seg.num_classes != sample.gt_seg.num_classes)
    throw ClassMismatchError("sample: degraded_seg K=" + std::to_string(sample.degraded_seg.num_classes) +
                             " vs gt_seg K=" + std::to_string(sample.gt_seg.num_classes));
  return sample;
}

Tensor<float> image_to_tensor(const Image& img) {
  Tensor<float> t(1, 3, img.height, img.width);
  for (int c = 0; c < 3; ++c) {
    float* p = t.plane(0, c);
    for (int hh = 0; hh < img.height; ++hh)
      for (int ww = 0; ww < img.width; ++ww) p[hh * img.width + ww] = float(img.chan[c](hh, ww));
  }
  return t;
}

Image tensor_to_image(const Tensor<float>& t, int batch_index) {
  if (t.c != 3) throw ShapeError("tensor_to_image: expected 3 channels, got " + std::to_string(t.c));
  Image img(t.h, t.w);
  for (int c = 0; c < 3; ++c) {
    const float* p = t.plane(batch_index, c);
    for (int hh = 0; hh < t.h; ++hh)
      for (int ww = 0; ww < t.w; ++ww)
        img.chan[c](hh, ww) = std::min(1.0, std::max(0.0, double(p[hh * t.w + ww])));
  }
  return img;
}

Tensor<float> soft_to_tensor(const SoftLabelMap& soft) {
  Tensor<float> t(1, soft.num_classes, soft.height(), soft.width());
  for (int c = 0; c < soft.num_classes; ++c) {
    float* p = t.plane(0, c);
    for (int hh = 0; hh < t.h; ++hh)
      for (int ww = 0; ww < t.w; ++ww) p[hh * t.w + ww] = float(soft.chan[c](hh, ww));
  }
  return t;
}

SoftLabelMap tensor_to_soft(const Tensor<float>& t, int batch_index) {
  SoftLabelMap soft(t.h, t.w, t.c);
  for (int c = 0; c < t.c; ++c) {
    const float* p = t.plane(batch_index, c);
    for (int hh = 0; hh < t.h; ++hh)
      for (int ww = 0; ww < t.w; ++ww) soft.chan[c](hh, ww) = double(p[hh * t.w + ww]);
  }
  return soft;
}

Tensor<float> onehot_tensor(const LabelMap& labels, int num_classes) {
  Tensor<float> t(1, num_classes, labels.height(), labels.width());
  for (int hh = 0; hh < t.h; ++hh)
    for (int ww = 0; ww < t.w; ++ww) {
      int v = labels.data(hh, ww);
      if (v < 0 || v >= num_classes)
        throw RangeError("onehot_tensor: label " + std::to_string(v) + " >= K");
      t.plane(0, v)[hh * t.w + ww] = 1.0f;
    }
  return t;
}

}  // namespace segres
