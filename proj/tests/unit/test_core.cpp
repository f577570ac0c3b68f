#include <doctest.h>

#include "segres/core.hpp"
#include "test_util.hpp"

using namespace segres;

TEST_CASE("encode_labels produces exact one-hot") {
  LabelMap m(1, 1, 2);
  m.data(0, 0) = 0;
  SoftLabelMap soft = encode_labels(m, 2);
  CHECK(soft.chan[0](0, 0) == 1.0);
  CHECK(soft.chan[1](0, 0) == 0.0);
}

TEST_CASE("encode_labels channels are complements on a 2x2 checker") {
  LabelMap m(2, 2, 2);
  m.data << 0, 1, 1, 0;
  SoftLabelMap soft = encode_labels(m, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      CHECK(soft.chan[0](i, j) + soft.chan[1](i, j) == 1.0);
      CHECK(soft.chan[0](i, j) == (m.data(i, j) == 0 ? 1.0 : 0.0));
    }
}

TEST_CASE("encode/decode round trip is exact") {
  const LabelMap m = testutil::random_labels(8, 8, 5, 42);
  const LabelMap back = decode_labels(encode_labels(m, 5));
  CHECK((back.data == m.data).all());
}

TEST_CASE("encode_labels rejects out-of-range labels naming the pixel") {
  LabelMap m(2, 2, 3);
  m.data(1, 0) = 3;
  CHECK_THROWS_WITH_AS(encode_labels(m, 3), doctest::Contains("(1,0)"), RangeError);
}

TEST_CASE("decode_labels ties break toward the lowest class") {
  SoftLabelMap soft(1, 1, 2);
  soft.chan[0](0, 0) = 0.5;
  soft.chan[1](0, 0) = 0.5;
  CHECK(decode_labels(soft).data(0, 0) == 0);
}

TEST_CASE("decode_labels matches a per-pixel argmax loop") {
  // random positive channels normalized to the simplex
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  const int K = 4;
  SoftLabelMap soft(8, 8, K);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double sum = 0;
      for (int k = 0; k < K; ++k) sum += (soft.chan[k](i, j) = unit(rng));
      for (int k = 0; k < K; ++k) soft.chan[k](i, j) /= sum;
    }
  const LabelMap got = decode_labels(soft);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (soft.chan[k](i, j) > soft.chan[best](i, j)) best = k;
      CHECK(got.data(i, j) == best);
    }
}

namespace {

QuadrupleSample make_sample(int size = 32, int k = 3) {
  QuadrupleSample s;
  s.degraded = testutil::random_image(size, size, 1);
  s.gt_image = testutil::random_image(size, size, 2);
  s.degraded_seg = testutil::random_labels(size, size, k, 3);
  s.gt_seg = testutil::random_labels(size, size, k, 4);
  return s;
}

}  // namespace

TEST_CASE("validate_sample returns a well-formed sample unchanged") {
  const QuadrupleSample s = make_sample();
  const QuadrupleSample& back = validate_sample(s);
  CHECK(&back == &s);
}

TEST_CASE("validate_sample flags shape mismatches") {
  QuadrupleSample s = make_sample();
  s.degraded = testutil::random_image(16, 16, 5);
  CHECK_THROWS_AS(validate_sample(s), ShapeError);
}

TEST_CASE("validate_sample flags label range violations") {
  QuadrupleSample s = make_sample();
  s.gt_seg.data(0, 0) = s.gt_seg.num_classes;  // value K
  CHECK_THROWS_AS(validate_sample(s), RangeError);
}

TEST_CASE("validate_sample flags class-count mismatches") {
  QuadrupleSample s = make_sample();
  s.degraded_seg.num_classes = s.gt_seg.num_classes + 1;
  CHECK_THROWS_AS(validate_sample(s), ClassMismatchError);
}

TEST_CASE("validate_sample flags pixel range violations") {
  QuadrupleSample s = make_sample();
  s.degraded.chan[1](3, 3) = 1.5;
  CHECK_THROWS_AS(validate_sample(s), RangeError);
}

TEST_CASE("validate_image enforces the minimum size") {
  CHECK_THROWS_AS(validate_image(Image::constant(4, 4, 0.5)), ShapeError);
  CHECK_NOTHROW(validate_image(Image::constant(8, 8, 0.5)));
}

TEST_CASE("soft label validation checks the per-pixel simplex") {
  SoftLabelMap soft(8, 8, 2);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      soft.chan[0](i, j) = 0.25;
      soft.chan[1](i, j) = 0.75;
    }
  CHECK_NOTHROW(validate_soft(soft));
  soft.chan[0](2, 2) = 0.5;  // sum 1.25
  CHECK_THROWS_AS(validate_soft(soft), RangeError);
}

TEST_CASE("tensor conversions round-trip images and labels") {
  const Image img = testutil::random_image(16, 16, 9);
  const Image back = tensor_to_image(image_to_tensor(img));
  for (int c = 0; c < 3; ++c)
    CHECK((back.chan[c] - img.chan[c]).abs().maxCoeff() < 1e-6);

  const LabelMap labels = testutil::random_labels(16, 16, 4, 10);
  const Tensor<float> onehot = onehot_tensor(labels, 4);
  const LabelMap decoded = decode_labels(tensor_to_soft(onehot));
  CHECK((decoded.data == labels.data).all());
}
