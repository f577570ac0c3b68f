#pragma once

#include <array>
#include <optional>
#include <string>

#include "segres/core.hpp"

namespace segres {

// Four-level severity tables for the regular degradation families.
inline constexpr std::array<double, 4> kBlurSigmas{1.2, 2.5, 6.5, 15.2};
inline constexpr std::array<double, 4> kNoiseVariances{0.05, 0.09, 0.13, 0.2};
inline constexpr std::array<int, 4> kJpegQualities{43, 12, 7, 4};
inline constexpr std::array<int, 4> kRedShifts{2, 6, 10, 14};
inline constexpr std::array<int, 4> kBlueShifts{1, 3, 5, 7};

// Reflection compositing defaults (severity-independent); apply() jitters
// alpha by +-kReflectionAlphaJitter from the spec seed.
inline constexpr double kReflectionAlpha = 0.8;
inline constexpr double kReflectionBlurSigma = 3.0;
inline constexpr double kReflectionAlphaJitter = 0.05;

// Convolution with a normalized 2D Gaussian of radius ceil(3*sigma);
// borders reflect (edge-inclusive fold).
Image gaussian_blur(const Image& img, double sigma);

// Per-channel variant used by the reflection compositor and tests.
Eigen::ArrayXXd gaussian_blur_channel(const Eigen::ArrayXXd& chan, double sigma);

// 1D kernel the separable blur uses; sum is 1 within 1e-9 (checked on
// construction). Exposed so tests can compare against a direct 2D product.
std::vector<double> gaussian_kernel_1d(double sigma);

// i.i.d. N(0, variance) per element (planes filled r, g, b in row-major
// order), then clamped to [0,1]. Same seed, same bits.
Image gaussian_noise(const Image& img, double variance, std::uint64_t seed);

// As gaussian_noise but also returns the pre-clamp image, which is what the
// statistical variance check measures.
std::pair<Image, Image> gaussian_noise_with_preclamp(const Image& img, double variance,
                                                     std::uint64_t seed);

// Baseline JPEG encode/decode round trip at the given quality (1..100).
Image jpeg_compress(const Image& img, int quality);

// R channel shifted +shift_r columns, B shifted +shift_b, G untouched;
// vacated columns filled by edge replication.
Image chromatic_aberration(const Image& img, int shift_r, int shift_b);

// out = alpha*scene + (1-alpha)*blur(reflection, blur_sigma), clamped.
Image reflection_composite(const Image& scene, const Image& reflection, double alpha,
                           double blur_sigma);

// Resolves a spec from the severity tables. Params may be overridden
// afterwards; apply() uses whatever the spec carries.
DegradationSpec make_spec(DegradationFamily family, int severity_index, std::uint64_t seed);

// Single dispatch point. Reflection requires aux (the reflection layer);
// other families ignore it.
Image apply(const DegradationSpec& spec, const Image& img, const Image* aux = nullptr);

std::string family_name(DegradationFamily family);
DegradationFamily family_from_name(const std::string& name);

}  // namespace segres
