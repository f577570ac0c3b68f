#include "segres/degrade.hpp"

#include <cmath>
#include <random>

#include "segres/jpeg_codec.hpp"

namespace segres {

namespace {

// Edge-inclusive reflection fold; handles any overshoot, so kernels larger
// than the image stay well-defined.
int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

Image clamp01(Image img) {
  for (auto& c : img.chan) c = c.min(1.0).max(0.0);
  return img;
}

}  // namespace

std::vector<double> gaussian_kernel_1d(double sigma) {
  if (sigma <= 0.0) throw DomainError("gaussian_blur: sigma must be positive");
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  double check = 0.0;
  for (double v : k) check += v;
  if (std::abs(check - 1.0) > 1e-9)
    throw NumericError("gaussian_blur: kernel normalization failed");
  return k;
}

Eigen::ArrayXXd gaussian_blur_channel(const Eigen::ArrayXXd& chan, double sigma) {
  const auto k = gaussian_kernel_1d(sigma);
  const int radius = int(k.size() / 2);
  const int h = int(chan.rows()), w = int(chan.cols());
  // The 2D kernel is the outer product of the 1D kernel with itself, so the
  // separable row/column passes match a direct 2D convolution.
  Eigen::ArrayXXd tmp(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += k[t + radius] * chan(i, reflect_index(j + t, w));
      tmp(i, j) = acc;
    }
  Eigen::ArrayXXd out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) acc += k[t + radius] * tmp(reflect_index(i + t, h), j);
      out(i, j) = acc;
    }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  Image out(img.height, img.width);
  for (int c = 0; c < 3; ++c) out.chan[c] = gaussian_blur_channel(img.chan[c], sigma);
  return clamp01(std::move(out));
}

std::pair<Image, Image> gaussian_noise_with_preclamp(const Image& img, double variance,
                                                     std::uint64_t seed) {
  if (variance < 0.0) throw DomainError("gaussian_noise: variance must be nonnegative");
  Image pre = img;
  if (variance > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(variance));
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) pre.chan[c](i, j) += dist(rng);
  }
  Image post = clamp01(pre);
  return {std::move(post), std::move(pre)};
}

Image gaussian_noise(const Image& img, double variance, std::uint64_t seed) {
  return gaussian_noise_with_preclamp(img, variance, seed).first;
}

Image jpeg_compress(const Image& img, int quality) {
  if (quality < 1 || quality > 100)
    throw DomainError("jpeg_compress: quality " + std::to_string(quality) + " outside 1..100");
  std::vector<std::uint8_t> rgb(std::size_t(img.height) * img.width * 3);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < 3; ++c)
        rgb[(std::size_t(i) * img.width + j) * 3 + c] =
            std::uint8_t(std::lround(std::min(1.0, std::max(0.0, img.chan[c](i, j))) * 255.0));
  const std::vector<std::uint8_t> encoded = jpeg_encode_rgb8(rgb.data(), img.width, img.height, quality);
  int dw = 0, dh = 0;
  const std::vector<std::uint8_t> decoded = jpeg_decode_rgb8(encoded, dw, dh);
  if (dw != img.width || dh != img.height)
    throw IoError("jpeg_compress: decoded size mismatch");
  Image out(img.height, img.width);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < 3; ++c)
        out.chan[c](i, j) = decoded[(std::size_t(i) * img.width + j) * 3 + c] / 255.0;
  return out;
}

Image chromatic_aberration(const Image& img, int shift_r, int shift_b) {
  if (shift_r < 0 || shift_b < 0) throw DomainError("chromatic_aberration: negative shift");
  if (shift_r >= img.width || shift_b >= img.width)
    throw DomainError("chromatic_aberration: shift >= image width");
  Image out = img;  // G stays
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      out.chan[0](i, j) = img.chan[0](i, std::max(0, j - shift_r));
      out.chan[2](i, j) = img.chan[2](i, std::max(0, j - shift_b));
    }
  }
  return out;
}

Image reflection_composite(const Image& scene, const Image& reflection, double alpha,
                           double blur_sigma) {
  if (alpha < 0.0 || alpha > 1.0) throw DomainError("reflection_composite: alpha outside [0,1]");
  if (!scene.same_shape(reflection))
    throw ShapeError("reflection_composite: scene/reflection shape mismatch");
  Image blurred = gaussian_blur(reflection, blur_sigma);
  Image out(scene.height, scene.width);
  for (int c = 0; c < 3; ++c)
    out.chan[c] = alpha * scene.chan[c] + (1.0 - alpha) * blurred.chan[c];
  return clamp01(std::move(out));
}

DegradationSpec make_spec(DegradationFamily family, int severity_index, std::uint64_t seed) {
  if (severity_index < 0 || severity_index > 3)
    throw DomainError("degradation severity must be in 0..3, got " + std::to_string(severity_index));
  DegradationSpec spec;
  spec.family = family;
  spec.severity_index = severity_index;
  spec.seed = seed;
  switch (family) {
    case DegradationFamily::GaussianBlur:
      spec.sigma = kBlurSigmas[severity_index];
      break;
    case DegradationFamily::GaussianNoise:
      spec.variance = kNoiseVariances[severity_index];
      break;
    case DegradationFamily::JpegCompression:
      spec.quality = kJpegQualities[severity_index];
      break;
    case DegradationFamily::ChromaticAberration:
      spec.shift_r = kRedShifts[severity_index];
      spec.shift_b = kBlueShifts[severity_index];
      break;
    case DegradationFamily::Reflection:
      spec.alpha = kReflectionAlpha;
      spec.reflection_blur_sigma = kReflectionBlurSigma;
      break;
  }
  return spec;
}

Image apply(const DegradationSpec& spec, const Image& img, const Image* aux) {
  switch (spec.family) {
    case DegradationFamily::GaussianBlur:
      return gaussian_blur(img, spec.sigma);
    case DegradationFamily::GaussianNoise:
      return gaussian_noise(img, spec.variance, spec.seed);
    case DegradationFamily::JpegCompression:
      return jpeg_compress(img, spec.quality);
    case DegradationFamily::ChromaticAberration:
      return chromatic_aberration(img, spec.shift_r, spec.shift_b);
    case DegradationFamily::Reflection: {
      if (aux == nullptr)
        throw DomainError("apply: Reflection requires the reflection layer as aux image");
      std::mt19937_64 rng(spec.seed);
      std::uniform_real_distribution<double> jitter(-kReflectionAlphaJitter, kReflectionAlphaJitter);
      const double alpha = std::min(1.0, std::max(0.0, spec.alpha + jitter(rng)));
      return reflection_composite(img, *aux, alpha, spec.reflection_blur_sigma);
    }
  }
  throw DomainError("apply: unknown degradation family");
}

std::string family_name(DegradationFamily family) {
  switch (family) {
    case DegradationFamily::GaussianBlur: return "gb";
    case DegradationFamily::GaussianNoise: return "gn";
    case DegradationFamily::JpegCompression: return "jpeg";
    case DegradationFamily::ChromaticAberration: return "ca";
    case DegradationFamily::Reflection: return "refl";
  }
  return "unknown";
}

DegradationFamily family_from_name(const std::string& name) {
  if (name == "gb" || name == "gaussian_blur") return DegradationFamily::GaussianBlur;
  if (name == "gn" || name == "gaussian_noise") return DegradationFamily::GaussianNoise;
  if (name == "jpeg" || name == "jpeg_compression") return DegradationFamily::JpegCompression;
  if (name == "ca" || name == "chromatic_aberration") return DegradationFamily::ChromaticAberration;
  if (name == "refl" || name == "reflection") return DegradationFamily::Reflection;
  throw ConfigError("unknown degradation family '" + name + "'");
}

}  // namespace segres
