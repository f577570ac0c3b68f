#include <doctest.h>

#include <random>

#include "segres/degrade.hpp"
#include "test_util.hpp"

using namespace segres;

TEST_CASE("severity tables match the reference lists") {
  CHECK(kBlurSigmas == std::array<double, 4>{1.2, 2.5, 6.5, 15.2});
  CHECK(kNoiseVariances == std::array<double, 4>{0.05, 0.09, 0.13, 0.2});
  CHECK(kJpegQualities == std::array<int, 4>{43, 12, 7, 4});
  CHECK(kRedShifts == std::array<int, 4>{2, 6, 10, 14});
  CHECK(kBlueShifts == std::array<int, 4>{1, 3, 5, 7});
}

TEST_CASE("make_spec resolves severity parameters") {
  CHECK(make_spec(DegradationFamily::GaussianBlur, 1, 0).sigma == 2.5);
  CHECK(make_spec(DegradationFamily::GaussianNoise, 3, 0).variance == 0.2);
  CHECK(make_spec(DegradationFamily::JpegCompression, 2, 0).quality == 7);
  const auto ca = make_spec(DegradationFamily::ChromaticAberration, 0, 0);
  CHECK(ca.shift_r == 2);
  CHECK(ca.shift_b == 1);
  CHECK_THROWS_AS(make_spec(DegradationFamily::GaussianBlur, 4, 0), DomainError);
  CHECK_THROWS_AS(make_spec(DegradationFamily::GaussianBlur, -1, 0), DomainError);
}

TEST_CASE("gaussian kernel sums to one") {
  for (double sigma : kBlurSigmas) {
    const auto k = gaussian_kernel_1d(sigma);
    CHECK(int(k.size()) == 2 * int(std::ceil(3.0 * sigma)) + 1);
    double sum2d = 0.0;
    for (double a : k)
      for (double b : k) sum2d += a * b;
    CHECK(std::abs(sum2d - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(gaussian_kernel_1d(0.0), DomainError);
  CHECK_THROWS_AS(gaussian_blur(Image::constant(8, 8, 0.5), -1.0), DomainError);
}

TEST_CASE("blur preserves constant images") {
  const Image img = Image::constant(16, 16, 0.5);
  const Image out = gaussian_blur(img, 2.5);
  for (int c = 0; c < 3; ++c) CHECK((out.chan[c] - 0.5).abs().maxCoeff() < 1e-6);
}

TEST_CASE("blur of a single white pixel matches a direct 2D convolution") {
  // brute-force oracle: explicit double loop over the 2D product kernel with
  // the same edge-inclusive reflection
  Image img(33, 33);
  img.chan[0](16, 16) = img.chan[1](16, 16) = img.chan[2](16, 16) = 1.0;
  const double sigma = 1.2;
  const Image out = gaussian_blur(img, sigma);

  const auto k = gaussian_kernel_1d(sigma);
  const int radius = int(k.size() / 2);
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  for (int i = 0; i < 33; ++i)
    for (int j = 0; j < 33; ++j) {
      double acc = 0.0;
      for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj)
          acc += k[di + radius] * k[dj + radius] *
                 img.chan[0](reflect(i + di, 33), reflect(j + dj, 33));
      CHECK(std::abs(out.chan[0](i, j) - acc) < 1e-6);
    }
}

TEST_CASE("blur commutes with constant offsets before clamping") {
  const Image img = testutil::random_image(24, 24, 3);
  Image scaled = img;
  for (auto& c : scaled.chan) c = c * 0.5;  // headroom so +0.2 stays in range
  Image offset = scaled;
  for (auto& c : offset.chan) c += 0.2;
  const Image a = gaussian_blur(scaled, 2.5);
  const Image b = gaussian_blur(offset, 2.5);
  for (int c = 0; c < 3; ++c) CHECK(((b.chan[c] - a.chan[c]) - 0.2).abs().maxCoeff() < 1e-6);
}

TEST_CASE("large-sigma blur stays in range on small images") {
  const Image img = testutil::random_image(16, 16, 11);
  const Image out = gaussian_blur(img, 15.2);  // kernel much larger than image
  for (int c = 0; c < 3; ++c) {
    CHECK(out.chan[c].isFinite().all());
    CHECK(out.chan[c].maxCoeff() <= 1.0);
    CHECK(out.chan[c].minCoeff() >= 0.0);
  }
}

TEST_CASE("zero-variance noise is the identity") {
  const Image img = testutil::random_image(16, 16, 4);
  const Image out = gaussian_noise(img, 0.0, 99);
  for (int c = 0; c < 3; ++c) CHECK((out.chan[c] == img.chan[c]).all());
  CHECK_THROWS_AS(gaussian_noise(img, -0.1, 0), DomainError);
}

TEST_CASE("noise is bit-deterministic under a fixed seed") {
  const Image img = testutil::random_image(16, 16, 4);
  const Image a = gaussian_noise(img, 0.09, 1234);
  const Image b = gaussian_noise(img, 0.09, 1234);
  const Image c = gaussian_noise(img, 0.09, 1235);
  bool all_equal = true, any_diff = false;
  for (int ch = 0; ch < 3; ++ch) {
    all_equal = all_equal && (a.chan[ch] == b.chan[ch]).all();
    any_diff = any_diff || (a.chan[ch] != c.chan[ch]).any();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("pre-clamp noise variance tracks the nominal value") {
  // smaller sibling of the acceptance check (~180k samples here)
  const Image img = Image::constant(245, 245, 0.5);
  const auto [post, pre] = gaussian_noise_with_preclamp(img, 0.05, 77);
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) acc += (pre.chan[c] - img.chan[c]).square().sum();
  const double var = acc / (3.0 * 245 * 245);
  CHECK(var == doctest::Approx(0.05).epsilon(0.05));
  for (int c = 0; c < 3; ++c) CHECK(post.chan[c].maxCoeff() <= 1.0);
}

TEST_CASE("jpeg round trip is deterministic and quality-monotonic") {
  // piecewise-smooth image so the codec has structure to lose
  Image img(32, 32);
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) {
      img.chan[0](i, j) = (i / 8 + j / 8) % 2 ? 0.8 : 0.2;
      img.chan[1](i, j) = 0.3 + 0.4 * (j / 32.0);
      img.chan[2](i, j) = 0.5 + 0.3 * std::sin(i / 5.0);
    }
  const Image q43 = jpeg_compress(img, 43);
  const Image q43_again = jpeg_compress(img, 43);
  const Image q4 = jpeg_compress(img, 4);
  for (int c = 0; c < 3; ++c) CHECK((q43.chan[c] == q43_again.chan[c]).all());

  auto mse = [&](const Image& a) {
    double acc = 0;
    for (int c = 0; c < 3; ++c) acc += (a.chan[c] - img.chan[c]).square().sum();
    return acc;
  };
  CHECK(mse(q43) < mse(q4));  // PSNR(q43) > PSNR(q4)
  CHECK_THROWS_AS(jpeg_compress(img, 0), DomainError);
  CHECK_THROWS_AS(jpeg_compress(img, 101), DomainError);
}

TEST_CASE("zero-shift chromatic aberration is the bit-exact identity") {
  const Image img = testutil::random_image(16, 16, 8);
  const Image out = chromatic_aberration(img, 0, 0);
  for (int c = 0; c < 3; ++c) CHECK((out.chan[c] == img.chan[c]).all());
}

TEST_CASE("chromatic aberration shifts R and B with edge replication") {
  const Image img = testutil::random_image(8, 8, 12);
  const Image out = chromatic_aberration(img, 2, 1);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      CHECK(out.chan[0](i, j) == img.chan[0](i, std::max(0, j - 2)));
      CHECK(out.chan[1](i, j) == img.chan[1](i, j));
      CHECK(out.chan[2](i, j) == img.chan[2](i, std::max(0, j - 1)));
    }
  CHECK_THROWS_AS(chromatic_aberration(img, 8, 0), DomainError);
  CHECK_THROWS_AS(chromatic_aberration(img, -1, 0), DomainError);
}

TEST_CASE("reflection composite matches the per-pixel formula") {
  const Image scene = testutil::random_image(32, 32, 20);
  const Image refl = testutil::random_image(32, 32, 21);
  const double alpha = 0.8, sigma = 3.0;
  const Image out = reflection_composite(scene, refl, alpha, sigma);
  const Image blurred = gaussian_blur(refl, sigma);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) {
        const double want =
            std::min(1.0, std::max(0.0, alpha * scene.chan[c](i, j) + (1 - alpha) * blurred.chan[c](i, j)));
        CHECK(std::abs(out.chan[c](i, j) - want) < 1e-6);
      }
}

TEST_CASE("reflection composite boundary cases") {
  const Image scene = testutil::random_image(16, 16, 30);
  const Image refl = testutil::random_image(16, 16, 31);
  const Image keep = reflection_composite(scene, refl, 1.0, 3.0);
  for (int c = 0; c < 3; ++c) CHECK((keep.chan[c] - scene.chan[c]).abs().maxCoeff() < 1e-12);
  const Image only = reflection_composite(scene, refl, 0.0, 0.05);
  const Image blurred = gaussian_blur(refl, 0.05);
  for (int c = 0; c < 3; ++c) CHECK((only.chan[c] - blurred.chan[c]).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(reflection_composite(scene, refl, 1.2, 1.0), DomainError);
}

TEST_CASE("apply dispatches to the family operation") {
  const Image img = testutil::random_image(16, 16, 40);
  const Image via_spec = apply(make_spec(DegradationFamily::GaussianBlur, 0, 0), img);
  const Image direct = gaussian_blur(img, 1.2);
  for (int c = 0; c < 3; ++c) CHECK((via_spec.chan[c] == direct.chan[c]).all());

  const auto noise_spec = make_spec(DegradationFamily::GaussianNoise, 3, 555);
  const Image n1 = apply(noise_spec, img);
  const Image n2 = gaussian_noise(img, 0.2, 555);
  for (int c = 0; c < 3; ++c) CHECK((n1.chan[c] == n2.chan[c]).all());
}

TEST_CASE("apply is bit-deterministic and validates aux") {
  const Image img = testutil::random_image(16, 16, 41);
  for (int severity : {0, 3}) {
    const auto spec = make_spec(DegradationFamily::GaussianNoise, severity, 7);
    const Image a = apply(spec, img);
    const Image b = apply(spec, img);
    for (int c = 0; c < 3; ++c) CHECK((a.chan[c] == b.chan[c]).all());
  }
  const auto refl_spec = make_spec(DegradationFamily::Reflection, 0, 3);
  CHECK_THROWS_AS(apply(refl_spec, img), DomainError);
  const Image aux = testutil::random_image(16, 16, 42);
  const Image r1 = apply(refl_spec, img, &aux);
  const Image r2 = apply(refl_spec, img, &aux);
  for (int c = 0; c < 3; ++c) CHECK((r1.chan[c] == r2.chan[c]).all());
}

TEST_CASE("family names round-trip") {
  for (auto fam : {DegradationFamily::GaussianBlur, DegradationFamily::GaussianNoise,
                   DegradationFamily::JpegCompression, DegradationFamily::ChromaticAberration,
                   DegradationFamily::Reflection})
    CHECK(family_from_name(family_name(fam)) == fam);
  CHECK_THROWS_AS(family_from_name("fog"), ConfigError);
}
