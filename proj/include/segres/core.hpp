#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

#include "segres/errors.hpp"
#include "segres/tensor.hpp"

namespace segres {

// Pixel data lives in [0,1] doubles throughout; 8-bit files are divided by
// 255 on load and rounded back on save. Channel planes are H x W arrays.
struct Image {
  int height = 0, width = 0;
  std::array<Eigen::ArrayXXd, 3> chan;  // r, g, b

  Image() = default;
  Image(int h, int w) : height(h), width(w) {
    for (auto& c : chan) c = Eigen::ArrayXXd::Zero(h, w);
  }

  static Image constant(int h, int w, double value) {
    Image img(h, w);
    for (auto& c : img.chan) c.setConstant(value);
    return img;
  }

  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

// Hard per-pixel class ids in {0..K-1}.
struct LabelMap {
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic> data;  // H x W
  int num_classes = 0;

  LabelMap() = default;
  LabelMap(int h, int w, int k)
      : data(Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic>::Zero(h, w)), num_classes(k) {}

  int height() const { return int(data.rows()); }
  int width() const { return int(data.cols()); }
};

// Per-pixel class probabilities; K planes of H x W, each pixel on the simplex.
struct SoftLabelMap {
  std::vector<Eigen::ArrayXXd> chan;  // size K
  int num_classes = 0;

  SoftLabelMap() = default;
  SoftLabelMap(int h, int w, int k) : num_classes(k) {
    chan.assign(k, Eigen::ArrayXXd::Zero(h, w));
  }

  int height() const { return chan.empty() ? 0 : int(chan[0].rows()); }
  int width() const { return chan.empty() ? 0 : int(chan[0].cols()); }
};

enum class DegradationFamily { GaussianBlur, GaussianNoise, JpegCompression, ChromaticAberration, Reflection };

// Degradation family plus resolved parameters; see degrade.hpp for the
// severity tables and the dispatching apply().
struct DegradationSpec {
  DegradationFamily family = DegradationFamily::GaussianBlur;
  int severity_index = 0;  // 0..3
  std::uint64_t seed = 0;
  // Family parameters; only the ones for `family` are meaningful.
  double sigma = 0.0;          // GaussianBlur
  double variance = 0.0;       // GaussianNoise
  int quality = 0;             // JpegCompression
  int shift_r = 0, shift_b = 0;  // ChromaticAberration
  double alpha = 0.0, reflection_blur_sigma = 0.0;  // Reflection
};

// One training record: degraded image, its segmentation from a
// normal-condition segmenter, and the ground-truth pair.
struct QuadrupleSample {
  Image degraded;         // I_d
  LabelMap degraded_seg;  // S_d
  Image gt_image;         // I_gt
  LabelMap gt_seg;        // S_gt
  DegradationSpec degradation;
};

constexpr int kMinImageSize = 8;
constexpr double kSoftSumTolerance = 1e-5;

void validate_image(const Image& img, const char* name = "image");
void validate_labels(const LabelMap& labels, const char* name = "labels");
void validate_soft(const SoftLabelMap& soft, const char* name = "soft labels");

// Exact one-hot encoding; throws RangeError naming the offending pixel when a
// label is outside {0..K-1}.
SoftLabelMap encode_labels(const LabelMap& labels, int num_classes);

// Per-pixel argmax; ties break toward the lowest class index.
LabelMap decode_labels(const SoftLabelMap& soft);

// Returns the sample untouched when every invariant holds, otherwise throws
// ShapeError / RangeError / ClassMismatchError.
const QuadrupleSample& validate_sample(const QuadrupleSample& sample);

// Network-boundary conversions (float NCHW tensors, N = 1).
Tensor<float> image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor<float>& t, int batch_index = 0);
Tensor<float> soft_to_tensor(const SoftLabelMap& soft);
SoftLabelMap tensor_to_soft(const Tensor<float>& t, int batch_index = 0);
Tensor<float> onehot_tensor(const LabelMap& labels, int num_classes);

}  // namespace segres
