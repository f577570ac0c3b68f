#include "segres/datagen.hpp"

#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>

#include "segres/checkpoint.hpp"
#include "segres/graph.hpp"
#include "segres/image_io.hpp"
#include "segres/jpeg_codec.hpp"
#include "segres/losses.hpp"

namespace segres {

using nlohmann::json;

void ToyDatasetConfig::validate() const {
  if (n_samples < 1) throw ConfigError("toy dataset: n_samples must be >= 1");
  if (image_size < 32) throw ConfigError("toy dataset: image_size must be >= 32");
  if (num_classes < 2) throw ConfigError("toy dataset: num_classes must be >= 2");
  if (num_classes > 16) throw ConfigError("toy dataset: num_classes must be <= 16");
  if (num_classes > kShapeKindCount + 1)
    throw ConfigError("toy dataset: K=" + std::to_string(num_classes) + " exceeds " +
                      std::to_string(kShapeKindCount) + " shape kinds + background");
  if (min_shapes < 1 || max_shapes < min_shapes)
    throw ConfigError("toy dataset: invalid shapes-per-image range");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw ConfigError("toy dataset: val_fraction must be in [0,1)");
}

bool shape_contains(const ShapeSpec& shape, double x, double y) {
  const double dx = x - shape.cx, dy = y - shape.cy, s = shape.size;
  switch (shape.kind) {
    case 1:  // circle
      return dx * dx + dy * dy <= s * s;
    case 2:  // square
      return std::abs(dx) <= s && std::abs(dy) <= s;
    case 3: {  // upward triangle
      if (dy < -s || dy > s) return false;
      const double half_width = (dy + s) / 2.0;
      return std::abs(dx) <= half_width;
    }
    case 4:  // diamond
      return std::abs(dx) + std::abs(dy) <= s;
    case 5: {  // ring
      const double r2 = dx * dx + dy * dy;
      return r2 <= s * s && r2 >= (0.5 * s) * (0.5 * s);
    }
    default:
      throw DomainError("shape_contains: unknown kind " + std::to_string(shape.kind));
  }
}

ToySample generate_toy_sample(const ToyDatasetConfig& cfg, int index) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, std::uint64_t(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = cfg.image_size;

  ToySample sample;
  sample.image = Image(n, n);
  sample.labels = LabelMap(n, n, cfg.num_classes);

  // Textured background: per-channel base, a linear gradient, mild noise.
  std::array<double, 3> base{}, gx{}, gy{};
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.25 + 0.5 * unit(rng);
    gx[c] = -0.15 + 0.3 * unit(rng);
    gy[c] = -0.15 + 0.3 * unit(rng);
  }
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = base[c] + gx[c] * (double(j) / n - 0.5) + gy[c] * (double(i) / n - 0.5) +
                   0.02 * (2.0 * unit(rng) - 1.0);
        sample.image.chan[c](i, j) = std::min(1.0, std::max(0.0, v));
      }

  const int kinds = cfg.num_classes - 1;
  std::uniform_int_distribution<int> n_shapes_dist(cfg.min_shapes, cfg.max_shapes);
  std::uniform_int_distribution<int> kind_dist(1, kinds);
  const int count = n_shapes_dist(rng);
  for (int s = 0; s < count; ++s) {
    ShapeSpec shape;
    shape.kind = kind_dist(rng);
    shape.size = (0.12 + 0.14 * unit(rng)) * n;
    // non-overlapping placement keeps every silhouette complete; shapes that
    // do not fit after a few tries are dropped
    bool placed = false;
    for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
      shape.cx = shape.size + 1.0 + unit(rng) * (n - 2.0 * shape.size - 2.0);
      shape.cy = shape.size + 1.0 + unit(rng) * (n - 2.0 * shape.size - 2.0);
      placed = true;
      for (const auto& other : sample.shapes) {
        const double dx = shape.cx - other.cx, dy = shape.cy - other.cy;
        const double min_dist = 1.45 * (shape.size + other.size);
        if (dx * dx + dy * dy < min_dist * min_dist) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) continue;
    // keep shapes clearly separable from the background color
    for (int attempt = 0; attempt < 16; ++attempt) {
      double contrast = 0.0;
      for (int c = 0; c < 3; ++c) {
        shape.color[c] = 0.05 + 0.9 * unit(rng);
        contrast = std::max(contrast, std::abs(shape.color[c] - base[c]));
      }
      if (contrast >= 0.3) break;
    }
    sample.shapes.push_back(shape);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (shape_contains(shape, j + 0.5, i + 0.5)) {
          sample.labels.data(i, j) = shape.kind;
          for (int c = 0; c < 3; ++c) sample.image.chan[c](i, j) = shape.color[c];
        }
  }
  return sample;
}

std::vector<std::pair<Image, LabelMap>> generate_toy_dataset(const ToyDatasetConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<Image, LabelMap>> out;
  out.reserve(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    ToySample s = generate_toy_sample(cfg, i);
    out.emplace_back(std::move(s.image), std::move(s.labels));
  }
  return out;
}

namespace {

Tensor<int> labels_to_tensor(const LabelMap& labels) {
  Tensor<int> t(1, 1, labels.height(), labels.width());
  for (int i = 0; i < t.h; ++i)
    for (int j = 0; j < t.w; ++j) t.plane(0, 0)[i * t.w + j] = labels.data(i, j);
  return t;
}

// Stacks single-sample tensors along the batch dimension.
template <typename S>
Tensor<S> stack_batch(const std::vector<Tensor<S>>& items) {
  Tensor<S> out(int(items.size()), items[0].c, items[0].h, items[0].w);
  const std::int64_t per = items[0].size();
  for (std::size_t i = 0; i < items.size(); ++i)
    std::copy(items[i].data.data(), items[i].data.data() + per, out.data.data() + per * i);
  return out;
}

}  // namespace

Segmenter train_clean_segmenter(const std::vector<std::pair<Image, LabelMap>>& pairs, int epochs,
                                std::uint64_t seed, const SegmenterTrainOptions& opts) {
  if (pairs.empty()) throw ConfigError("train_clean_segmenter: empty training set");
  const int num_classes = pairs.front().second.num_classes;

  Segmenter seg;
  seg.num_classes = num_classes;
  seg.net_config.in_channels = 3;
  seg.net_config.out_channels = num_classes;
  seg.net_config.base_width = opts.base_width;
  seg.net_config.levels = opts.levels;
  seg.net_config.head = HeadKind::Softmax;
  seg.net_config.seed = mix_seed(seed, 0xC1EA);
  seg.net = EncoderDecoder<float>(seg.net_config);

  const int batch = std::min<int>(opts.batch_size, int(pairs.size()));
  const std::int64_t iterations =
      std::int64_t(epochs) * ((std::int64_t(pairs.size()) + batch - 1) / batch);

  Adam<float> opt(seg.net.params(), opts.lr);
  for (std::int64_t it = 0; it < iterations; ++it) {
    std::mt19937_64 rng(mix_seed(seed, 0x5E6 + std::uint64_t(it)));
    std::uniform_int_distribution<int> pick(0, int(pairs.size()) - 1);
    std::vector<Tensor<float>> images;
    std::vector<Tensor<int>> labels;
    for (int b = 0; b < batch; ++b) {
      const auto& p = pairs[pick(rng)];
      images.push_back(image_to_tensor(p.first));
      labels.push_back(labels_to_tensor(p.second));
    }
    Tensor<float> x = stack_batch(images);
    Tensor<int> y = stack_batch(labels);

    Graph<float> g;
    int probs = seg.net.forward(g, g.leaf(std::move(x)));
    int loss = cross_entropy_mean(g, probs, y);
    if (!std::isfinite(double(g.value(loss).item())))
      throw NumericError("segmenter training diverged (NaN loss) at iteration " +
                         std::to_string(it));
    opt.zero_grad(seg.net.params());
    g.backward(loss);
    opt.step(seg.net.params());
  }
  return seg;
}

LabelMap produce_degraded_segmentation(Segmenter& seg, const Image& degraded) {
  if (degraded.height < kMinImageSize || degraded.width < kMinImageSize)
    throw ShapeError("produce_degraded_segmentation: image below segmenter minimum size");
  Graph<float> g;
  int probs = seg.net.forward(g, g.leaf(image_to_tensor(degraded)));
  SoftLabelMap soft = tensor_to_soft(g.value(probs));
  return decode_labels(soft);
}

void save_segmenter(const std::filesystem::path& path, Segmenter& seg) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write segmenter file: " + path.string());
  os.write("SEGRSG01", 8);
  bin::write_u32(os, std::uint32_t(seg.num_classes));
  bin::write_u32(os, std::uint32_t(seg.net_config.base_width));
  bin::write_u32(os, std::uint32_t(seg.net_config.levels));
  bin::write_u64(os, seg.net_config.seed);
  bin::write_params(os, seg.net.params());
}

Segmenter load_segmenter(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open segmenter file: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "SEGRSG01")
    throw IoError("not a segmenter file: " + path.string());
  Segmenter seg;
  seg.num_classes = int(bin::read_u32(is));
  seg.net_config.in_channels = 3;
  seg.net_config.out_channels = seg.num_classes;
  seg.net_config.base_width = int(bin::read_u32(is));
  seg.net_config.levels = int(bin::read_u32(is));
  seg.net_config.head = HeadKind::Softmax;
  seg.net_config.seed = bin::read_u64(is);
  seg.net = EncoderDecoder<float>(seg.net_config);
  bin::read_params(is, seg.net.params());
  return seg;
}

// ---- manifest --------------------------------------------------------------

namespace {

json spec_to_json(const DegradationSpec& spec) {
  json params;
  switch (spec.family) {
    case DegradationFamily::GaussianBlur:
      params["sigma"] = spec.sigma;
      break;
    case DegradationFamily::GaussianNoise:
      params["variance"] = spec.variance;
      break;
    case DegradationFamily::JpegCompression:
      params["quality"] = spec.quality;
      break;
    case DegradationFamily::ChromaticAberration:
      params["shift_r"] = spec.shift_r;
      params["shift_b"] = spec.shift_b;
      break;
    case DegradationFamily::Reflection:
      params["alpha"] = spec.alpha;
      params["blur_sigma"] = spec.reflection_blur_sigma;
      break;
  }
  return json{{"family", family_name(spec.family)},
              {"severity", spec.severity_index},
              {"seed", spec.seed},
              {"params", params}};
}

DegradationSpec spec_from_json(const json& j) {
  DegradationSpec spec;
  spec.family = family_from_name(j.at("family").get<std::string>());
  spec.severity_index = j.at("severity").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  const json& params = j.at("params");
  switch (spec.family) {
    case DegradationFamily::GaussianBlur:
      spec.sigma = params.at("sigma").get<double>();
      break;
    case DegradationFamily::GaussianNoise:
      spec.variance = params.at("variance").get<double>();
      break;
    case DegradationFamily::JpegCompression:
      spec.quality = params.at("quality").get<int>();
      break;
    case DegradationFamily::ChromaticAberration:
      spec.shift_r = params.at("shift_r").get<int>();
      spec.shift_b = params.at("shift_b").get<int>();
      break;
    case DegradationFamily::Reflection:
      spec.alpha = params.at("alpha").get<double>();
      spec.reflection_blur_sigma = params.at("blur_sigma").get<double>();
      break;
  }
  return spec;
}

std::string zero_pad(int v, int width = 6) {
  std::string s = std::to_string(v);
  return std::string(std::size_t(std::max(0, width - int(s.size()))), '0') + s;
}

}  // namespace

std::vector<const ManifestRecord*> DatasetManifest::split_records(const std::string& split) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(&r);
  return out;
}

DatasetManifest build_dataset(const ToyDatasetConfig& cfg, const std::vector<DegradationSpec>& specs,
                              Segmenter& seg, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (specs.empty()) throw ConfigError("build_dataset: no degradation specs");
  if (seg.num_classes != cfg.num_classes)
    throw ClassMismatchError("build_dataset: segmenter K differs from dataset K");

  std::filesystem::create_directories(out_dir);
  for (const char* sub : {"degraded", "degraded_seg", "gt_image", "gt_seg"})
    std::filesystem::create_directories(out_dir / sub);

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.num_classes = cfg.num_classes;
  manifest.image_size = cfg.image_size;
  manifest.jpeg_codec = jpeg_codec_identity();
  manifest.segmenter_file = "segmenter.bin";
  save_segmenter(out_dir / manifest.segmenter_file, seg);

  const int n_val = int(std::lround(cfg.val_fraction * cfg.n_samples));
  const int n_train = cfg.n_samples - n_val;

  int index = 0;
  for (int gi = 0; gi < cfg.n_samples; ++gi) {
    ToySample clean = generate_toy_sample(cfg, gi);
    for (std::size_t si = 0; si < specs.size(); ++si) {
      DegradationSpec spec = specs[si];
      // Derive a record-specific seed so stochastic families decorrelate.
      spec.seed = mix_seed(spec.seed, std::uint64_t(gi) * 131 + si);
      std::optional<Image> aux;
      if (spec.family == DegradationFamily::Reflection) {
        // Another corpus image serves as the reflection layer.
        aux = generate_toy_sample(cfg, (gi + 1) % cfg.n_samples).image;
      }
      Image degraded = apply(spec, clean.image, aux ? &*aux : nullptr);
      LabelMap degraded_seg = produce_degraded_segmentation(seg, degraded);

      ManifestRecord rec;
      rec.index = index;
      rec.gt_index = gi;
      rec.split = gi < n_train ? "train" : "val";
      rec.degraded = "degraded/" + zero_pad(index) + ".png";
      rec.degraded_seg = "degraded_seg/" + zero_pad(index) + ".png";
      rec.gt_image = "gt_image/" + zero_pad(index) + ".png";
      rec.gt_seg = "gt_seg/" + zero_pad(index) + ".png";
      rec.degradation = spec;

      save_image_png(out_dir / rec.degraded, degraded);
      save_label_png(out_dir / rec.degraded_seg, degraded_seg);
      save_image_png(out_dir / rec.gt_image, clean.image);
      save_label_png(out_dir / rec.gt_seg, clean.labels);
      manifest.records.push_back(std::move(rec));
      ++index;
    }
  }
  save_manifest(manifest);
  return manifest;
}

void save_manifest(const DatasetManifest& manifest) {
  const auto path = manifest.root / "manifest.jsonl";
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path.string());
  json header{{"type", "header"},
              {"num_classes", manifest.num_classes},
              {"image_size", manifest.image_size},
              {"jpeg_codec", manifest.jpeg_codec},
              {"segmenter", manifest.segmenter_file}};
  os << header.dump() << "\n";
  for (const auto& r : manifest.records) {
    json j{{"index", r.index},       {"gt_index", r.gt_index},
           {"split", r.split},       {"degraded", r.degraded},
           {"degraded_seg", r.degraded_seg}, {"gt_image", r.gt_image},
           {"gt_seg", r.gt_seg},     {"degradation", spec_to_json(r.degradation)}};
    os << j.dump() << "\n";
  }
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_file) {
  std::ifstream is(manifest_file);
  if (!is) throw IoError("cannot open manifest: " + manifest_file.string());
  DatasetManifest manifest;
  manifest.root = manifest_file.parent_path();

  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("manifest parse error: " + manifest_file.string());
    if (j.value("type", "") == "header") {
      manifest.num_classes = j.at("num_classes").get<int>();
      manifest.image_size = j.value("image_size", 0);
      manifest.jpeg_codec = j.value("jpeg_codec", "");
      manifest.segmenter_file = j.value("segmenter", "");
      have_header = true;
      continue;
    }
    ManifestRecord r;
    r.index = j.at("index").get<int>();
    r.gt_index = j.value("gt_index", r.index);
    r.split = j.at("split").get<std::string>();
    r.degraded = j.at("degraded").get<std::string>();
    r.degraded_seg = j.at("degraded_seg").get<std::string>();
    r.gt_image = j.at("gt_image").get<std::string>();
    r.gt_seg = j.at("gt_seg").get<std::string>();
    r.degradation = spec_from_json(j.at("degradation"));
    manifest.records.push_back(std::move(r));
  }
  if (!have_header) throw IoError("manifest missing header line: " + manifest_file.string());

  // Invariants: every referenced file exists; splits disjoint in gt_index.
  std::map<int, std::string> gt_split;
  for (const auto& r : manifest.records) {
    for (const std::string* rel : {&r.degraded, &r.degraded_seg, &r.gt_image, &r.gt_seg})
      if (!std::filesystem::exists(manifest.root / *rel))
        throw IoError("manifest references missing file: " + (manifest.root / *rel).string());
    auto [it, inserted] = gt_split.emplace(r.gt_index, r.split);
    if (!inserted && it->second != r.split)
      throw ConfigError("manifest: gt image " + std::to_string(r.gt_index) +
                        " appears in splits '" + it->second + "' and '" + r.split + "'");
  }
  return manifest;
}

QuadrupleSample load_record(const DatasetManifest& manifest, const ManifestRecord& record) {
  QuadrupleSample s;
  s.degraded = load_image_png(manifest.root / record.degraded);
  s.degraded_seg = load_label_png(manifest.root / record.degraded_seg, manifest.num_classes);
  s.gt_image = load_image_png(manifest.root / record.gt_image);
  s.gt_seg = load_label_png(manifest.root / record.gt_seg, manifest.num_classes);
  s.degradation = record.degradation;
  validate_sample(s);
  return s;
}

}  // namespace segres
