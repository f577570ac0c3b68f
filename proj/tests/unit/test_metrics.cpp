#include <doctest.h>

#include <random>

#include "segres/metrics.hpp"
#include "test_util.hpp"

using namespace segres;

TEST_CASE("perfect prediction gives a diagonal confusion matrix") {
  const LabelMap m = testutil::random_labels(8, 8, 4, 1);
  const ConfusionMatrix cm = confusion_matrix(m, m, 4);
  CHECK(cm.total() == 64);
  std::int64_t trace = 0;
  for (int i = 0; i < 4; ++i) trace += cm.counts(i, i);
  CHECK(trace == 64);
  const SegScores s = seg_scores(cm);
  CHECK(s.pa == 1.0);
  CHECK(s.mpa == 1.0);
  CHECK(s.miou == 1.0);
  CHECK(s.fwiou == 1.0);
}

TEST_CASE("hand-counted 2x2 confusion matrix") {
  LabelMap pred(2, 2, 2), gt(2, 2, 2);
  pred.data << 0, 0, 0, 0;
  gt.data << 0, 0, 1, 1;
  const ConfusionMatrix cm = confusion_matrix(pred, gt, 2);
  CHECK(cm.counts(0, 0) == 2);
  CHECK(cm.counts(0, 1) == 0);
  CHECK(cm.counts(1, 0) == 2);
  CHECK(cm.counts(1, 1) == 0);
}

TEST_CASE("confusion matrix matches a per-pixel loop on random maps") {
  const LabelMap pred = testutil::random_labels(16, 16, 5, 2);
  const LabelMap gt = testutil::random_labels(16, 16, 5, 3);
  const ConfusionMatrix cm = confusion_matrix(pred, gt, 5);
  Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> want =
      Eigen::Array<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(5, 5);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) ++want(gt.data(i, j), pred.data(i, j));
  CHECK((cm.counts == want).all());
}

TEST_CASE("confusion matrix accumulation is entry-wise addition") {
  const LabelMap p1 = testutil::random_labels(8, 8, 3, 4);
  const LabelMap g1 = testutil::random_labels(8, 8, 3, 5);
  const LabelMap p2 = testutil::random_labels(8, 8, 3, 6);
  const LabelMap g2 = testutil::random_labels(8, 8, 3, 7);
  ConfusionMatrix sum = confusion_matrix(p1, g1, 3);
  sum += confusion_matrix(p2, g2, 3);
  ConfusionMatrix direct(3);
  accumulate_confusion(direct, p1, g1);
  accumulate_confusion(direct, p2, g2);
  CHECK((sum.counts == direct.counts).all());
}

TEST_CASE("seg scores of the [[2,0],[2,0]] matrix") {
  ConfusionMatrix cm(2);
  cm.counts(0, 0) = 2;
  cm.counts(1, 0) = 2;
  const SegScores s = seg_scores(cm);
  CHECK(s.pa == 0.5);
  CHECK(s.mpa == 0.5);
  CHECK(s.miou == 0.25);
  CHECK(s.fwiou == 0.25);
}

TEST_CASE("seg scores match an independent formula evaluation on random matrices") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> count(0, 50);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 4;
    ConfusionMatrix cm(K);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) cm.counts(i, j) = count(rng);
    if (cm.total() == 0) continue;
    const SegScores s = seg_scores(cm);

    // independent re-derivation, formula by formula
    double total = double(cm.total());
    double trace = 0, mpa = 0, miou = 0, fw = 0;
    int mpa_n = 0, miou_n = 0;
    for (int i = 0; i < K; ++i) {
      trace += double(cm.counts(i, i));
      double row = 0, col = 0;
      for (int j = 0; j < K; ++j) {
        row += double(cm.counts(i, j));
        col += double(cm.counts(j, i));
      }
      if (row > 0) {
        mpa += double(cm.counts(i, i)) / row;
        ++mpa_n;
      }
      if (row + col - double(cm.counts(i, i)) > 0) {
        const double iou = double(cm.counts(i, i)) / (row + col - double(cm.counts(i, i)));
        miou += iou;
        ++miou_n;
        fw += row / total * iou;
      }
    }
    CHECK(s.pa == doctest::Approx(trace / total).epsilon(1e-9));
    CHECK(s.mpa == doctest::Approx(mpa / mpa_n).epsilon(1e-9));
    CHECK(s.miou == doctest::Approx(miou / miou_n).epsilon(1e-9));
    CHECK(s.fwiou == doctest::Approx(fw).epsilon(1e-9));
  }
}

TEST_CASE("classes absent from both maps are excluded from the means") {
  ConfusionMatrix cm(3);  // class 2 never occurs
  cm.counts(0, 0) = 6;
  cm.counts(0, 1) = 2;
  cm.counts(1, 1) = 4;
  const SegScores s = seg_scores(cm);
  CHECK(s.mpa == doctest::Approx((6.0 / 8.0 + 1.0) / 2.0));
  CHECK(s.miou == doctest::Approx((6.0 / 8.0 + 4.0 / 6.0) / 2.0));
}

TEST_CASE("seg scores are invariant under simultaneous relabeling") {
  const int K = 4;
  const LabelMap pred = testutil::random_labels(16, 16, K, 21);
  const LabelMap gt = testutil::random_labels(16, 16, K, 22);
  const SegScores base = seg_scores(confusion_matrix(pred, gt, K));
  const std::array<int, 4> perm{2, 0, 3, 1};
  LabelMap pred_p = pred, gt_p = gt;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      pred_p.data(i, j) = perm[pred.data(i, j)];
      gt_p.data(i, j) = perm[gt.data(i, j)];
    }
  const SegScores permuted = seg_scores(confusion_matrix(pred_p, gt_p, K));
  CHECK(base.pa == doctest::Approx(permuted.pa).epsilon(1e-12));
  CHECK(base.mpa == doctest::Approx(permuted.mpa).epsilon(1e-12));
  CHECK(base.miou == doctest::Approx(permuted.miou).epsilon(1e-12));
  CHECK(base.fwiou == doctest::Approx(permuted.fwiou).epsilon(1e-12));
}

TEST_CASE("psnr closed forms and symmetry") {
  const Image a = Image::constant(16, 16, 0.3);
  Image b = a;
  for (auto& c : b.chan) c += 16.0 / 255.0;
  CHECK(psnr(a, b) == doctest::Approx(24.0484).epsilon(1e-4));
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK(std::isinf(psnr(a, a)));

  const Image x = testutil::random_image(16, 16, 100);
  const Image y = testutil::random_image(16, 16, 101);
  // brute-force MSE oracle
  double se = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) se += std::pow(x.chan[c](i, j) - y.chan[c](i, j), 2);
  const double want = 10.0 * std::log10(1.0 / (se / (3 * 16 * 16)));
  CHECK(psnr(x, y) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("ssim of identical images is one") {
  const Image a = testutil::random_image(32, 32, 50);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ssim symmetry") {
  const Image a = testutil::random_image(24, 24, 51);
  const Image b = testutil::random_image(24, 24, 52);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-9));
}

TEST_CASE("ssim penalizes structural inversion") {
  // high-contrast checkerboard vs its negative
  Image a(32, 32);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) a.chan[c](i, j) = ((i / 4 + j / 4) % 2) ? 0.9 : 0.1;
  Image b = a;
  for (auto& c : b.chan) c = 1.0 - c;
  CHECK(ssim(a, b) < 0.5);
}

TEST_CASE("ssim constant-image closed form") {
  const Image a = Image::constant(16, 16, 0.5);
  const Image b = Image::constant(16, 16, 0.7);
  constexpr double c1 = 0.01 * 0.01;
  const double want = (2.0 * 0.5 * 0.7 + c1) / (0.5 * 0.5 + 0.7 * 0.7 + c1);
  CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Image::constant(8, 8, 0.5), Image::constant(8, 8, 0.5)), ShapeError);
}

TEST_CASE("pa equals the matching fraction on binary maps") {
  const int h = 16, w = 16;
  LabelMap gt(h, w, 2), pred(h, w, 2);
  // gt all class 1; prediction matches on the first 64 pixels
  gt.data.setConstant(1);
  pred.data.setConstant(0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < w; ++j) pred.data(i, j) = 1;
  const SegScores s = seg_scores(confusion_matrix(pred, gt, 2));
  CHECK(s.pa == doctest::Approx(64.0 / 256.0));
}
