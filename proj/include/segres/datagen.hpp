#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "segres/core.hpp"
#include "segres/degrade.hpp"
#include "segres/networks.hpp"

namespace segres {

// Synthetic shapes corpus standing in for the full-scale datasets: colored
// geometric shapes on a textured background, one class per shape kind plus
// background class 0.
struct ToyDatasetConfig {
  int n_samples = 600;   // clean images; the trailing val_fraction become val
  int image_size = 64;
  int num_classes = 4;   // background + up to kShapeKindCount shape kinds
  int min_shapes = 3, max_shapes = 6;
  std::uint64_t seed = 1;
  double val_fraction = 1.0 / 6.0;

  void validate() const;
};

constexpr int kShapeKindCount = 5;  // circle, square, triangle, diamond, ring

// kind is the label class (1..K-1); coordinates in pixels, (x right, y down).
struct ShapeSpec {
  int kind = 1;
  double cx = 0, cy = 0, size = 0;
  std::array<double, 3> color{};
};

struct ToySample {
  Image image;
  LabelMap labels;
  std::vector<ShapeSpec> shapes;  // draw order; later shapes occlude earlier
};

// Membership predicate the rasterizer uses; (x, y) are pixel-center coords.
bool shape_contains(const ShapeSpec& shape, double x, double y);

ToySample generate_toy_sample(const ToyDatasetConfig& cfg, int index);
std::vector<std::pair<Image, LabelMap>> generate_toy_dataset(const ToyDatasetConfig& cfg);

// Small clean-condition segmenter playing the role of the pre-trained models.
struct Segmenter {
  EncoderDecoderConfig net_config;
  EncoderDecoder<float> net;
  int num_classes = 0;
};

struct SegmenterTrainOptions {
  int batch_size = 8;
  double lr = 1e-3;
  int base_width = 16;
  int levels = 4;  // receptive field must cover the largest toy shapes
};

// Trains on clean pairs with cross-entropy; throws NumericError naming the
// iteration on divergence.
Segmenter train_clean_segmenter(const std::vector<std::pair<Image, LabelMap>>& pairs, int epochs,
                                std::uint64_t seed, const SegmenterTrainOptions& opts = {});

// Hard label map = per-pixel argmax of the segmenter on the given image.
LabelMap produce_degraded_segmentation(Segmenter& seg, const Image& degraded);

void save_segmenter(const std::filesystem::path& path, Segmenter& seg);
Segmenter load_segmenter(const std::filesystem::path& path);

struct ManifestRecord {
  int index = 0;
  int gt_index = 0;  // clean-sample id; splits are disjoint in gt_index
  std::string split;
  std::string degraded, degraded_seg, gt_image, gt_seg;  // paths relative to root
  DegradationSpec degradation;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory containing manifest.jsonl
  int num_classes = 0;
  int image_size = 0;
  std::string jpeg_codec;
  std::string segmenter_file;  // relative; empty when not bundled
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split_records(const std::string& split) const;
};

// Materializes the quadruple dataset: for each clean pair and spec,
// I_d = apply(spec, I_gt), S_d = segmenter(I_d); writes PNGs, the segmenter,
// and manifest.jsonl under out_dir.
DatasetManifest build_dataset(const ToyDatasetConfig& cfg, const std::vector<DegradationSpec>& specs,
                              Segmenter& seg, const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest);
// Loads and validates: referenced files exist, splits disjoint by gt_index.
DatasetManifest load_manifest(const std::filesystem::path& manifest_file);

QuadrupleSample load_record(const DatasetManifest& manifest, const ManifestRecord& record);

}  // namespace segres
