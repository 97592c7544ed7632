#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "sgs/evaluation.hpp"
#include "sgs/frame_encoder.hpp"
#include "sgs/rng.hpp"
#include "sgs/tensor.hpp"

using namespace sgs;

namespace {

Tensor<float> random_frame(int h, int w, Rng& rng) {
  std::vector<float> data(size_t(h) * w);
  for (auto& v : data) v = float(rng.uniform());
  return Tensor<float>::from({h, w, 1}, data);
}

Tensor<float> random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::vector<float> data(size_t(rows) * cols);
  for (auto& v : data) v = float(scale * rng.normal());
  return Tensor<float>::from({rows, cols}, data);
}

// Plain transcription of the per-window statistic for the oracle tests:
// population moments over one 8x8 window, then
// (2*mu1*mu2 + C1)(2*cov + C2) / ((mu1^2 + mu2^2 + C1)(var1 + var2 + C2)),
// averaged over the non-overlapping windows.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                   double range) {
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  double total = 0;
  int count = 0;
  for (int wy = 0; wy + 8 <= h; wy += 8)
    for (int wx = 0; wx + 8 <= w; wx += 8) {
      double m1 = 0, m2 = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          m1 += a[(wy + y) * w + wx + x];
          m2 += b[(wy + y) * w + wx + x];
        }
      m1 /= 64;
      m2 /= 64;
      double v1 = 0, v2 = 0, cv = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double d1 = a[(wy + y) * w + wx + x] - m1;
          double d2 = b[(wy + y) * w + wx + x] - m2;
          v1 += d1 * d1;
          v2 += d2 * d2;
          cv += d1 * d2;
        }
      v1 /= 64;
      v2 /= 64;
      cv /= 64;
      total += (2 * m1 * m2 + c1) * (2 * cv + c2) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
      ++count;
    }
  return total / count;
}

// Literal diagonal Fréchet formula with unbiased variances, kept deliberately
// in the published s1 + s2 - 2*sqrt(s1*s2) shape.
double fvd_oracle(const Tensor<float>& a, const Tensor<float>& b) {
  const int n1 = a.extent(0), n2 = b.extent(0), d = a.extent(1);
  auto av = a.value();
  auto bv = b.value();
  double total = 0;
  for (int k = 0; k < d; ++k) {
    double m1 = 0, m2 = 0;
    for (int i = 0; i < n1; ++i) m1 += av[i * d + k];
    for (int i = 0; i < n2; ++i) m2 += bv[i * d + k];
    m1 /= n1;
    m2 /= n2;
    double s1 = 0, s2 = 0;
    for (int i = 0; i < n1; ++i) s1 += (av[i * d + k] - m1) * (av[i * d + k] - m1);
    for (int i = 0; i < n2; ++i) s2 += (bv[i * d + k] - m2) * (bv[i * d + k] - m2);
    s1 /= n1 - 1;
    s2 /= n2 - 1;
    total += (m1 - m2) * (m1 - m2) + s1 + s2 - 2 * std::sqrt(s1 * s2);
  }
  return total;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("ssim is exactly one on identical frames and symmetric") {
  Rng rng(411);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_frame(16, 24, rng);
    CHECK(ssim(a, a) == 1.0);
    auto b = random_frame(16, 24, rng);
    const double ab = ssim(a, b);
    CHECK(ab == ssim(b, a));
    CHECK(ab < 1.0);
    CHECK(ab >= -1.0);
  }
  // Constant frames: zero variance everywhere, stabilizers keep it exact.
  auto ones = Tensor<float>::from({16, 16, 1}, std::vector<float>(256, 0.5f));
  CHECK(ssim(ones, ones) == 1.0);
}

TEST_CASE("ssim matches an independent transcription") {
  Rng rng(412);
  for (int trial = 0; trial < 8; ++trial) {
    const int h = 8 * (1 + rng.uniform_int(3));
    const int w = 8 * (1 + rng.uniform_int(3));
    auto a = random_frame(h, w, rng);
    auto b = random_frame(h, w, rng);
    std::vector<double> ad(a.value().begin(), a.value().end());
    std::vector<double> bd(b.value().begin(), b.value().end());
    CHECK(std::fabs(ssim(a, b) - ssim_oracle(ad, bd, h, w, 1.0)) < 1e-9);
    CHECK(std::fabs(ssim(a, b, 2.0) - ssim_oracle(ad, bd, h, w, 2.0)) < 1e-9);
  }
}

TEST_CASE("ssim on a checkerboard against its inverse is strongly negative") {
  std::vector<float> board(256), inverse(256);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      board[y * 16 + x] = float((x + y) % 2);
      inverse[y * 16 + x] = float(1 - (x + y) % 2);
    }
  auto a = Tensor<float>::from({16, 16, 1}, board);
  auto b = Tensor<float>::from({16, 16, 1}, inverse);
  // Every window: means 0.5, variances 0.25, covariance -0.25, so the value
  // is (0.5 + 1e-4)(-0.5 + 9e-4) / ((0.5 + 1e-4)(0.5 + 9e-4)).
  const double expected = (-0.5 + 9e-4) / (0.5 + 9e-4);
  CHECK(std::fabs(ssim(a, b) - expected) < 1e-12);
  CHECK(ssim(a, b) < -0.99);
}

TEST_CASE("ssim rejects bad inputs and drops partial windows") {
  Rng rng(413);
  auto a = random_frame(16, 16, rng);
  auto b = random_frame(16, 24, rng);
  CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ssim(a, a, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ssim(a, a, -1.0), std::invalid_argument);
  auto tiny = random_frame(8, 8, rng);
  CHECK_THROWS_AS(ssim(tiny, a), std::invalid_argument);
  auto flat = Tensor<float>::from({4, 4, 1}, std::vector<float>(16, 0.0f));
  CHECK_THROWS_AS(ssim(flat, flat), std::invalid_argument);
  auto two_channel = Tensor<float>::from({16, 16, 2}, std::vector<float>(512, 0.0f));
  CHECK_THROWS_AS(ssim(two_channel, two_channel), std::invalid_argument);

  // 20x20 against 16x16 content in the shared top-left 2x2 block of windows:
  // the ragged 4-pixel margins must not contribute.
  std::vector<float> big(400);
  Rng fill(414);
  for (auto& v : big) v = float(fill.uniform());
  std::vector<float> small(256);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) small[y * 16 + x] = big[y * 20 + x];
  std::vector<float> big_b(400);
  for (auto& v : big_b) v = float(fill.uniform());
  std::vector<float> small_b(256);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) small_b[y * 16 + x] = big_b[y * 20 + x];
  const double on_big = ssim(Tensor<float>::from({20, 20, 1}, big),
                             Tensor<float>::from({20, 20, 1}, big_b));
  const double on_small = ssim(Tensor<float>::from({16, 16, 1}, small),
                               Tensor<float>::from({16, 16, 1}, small_b));
  CHECK(on_big == on_small);
}

TEST_CASE("fvd proxy closed forms") {
  Rng rng(421);
  auto real = random_mat(12, 6, rng);
  CHECK(fvd_proxy(real, real) == 0.0);

  // Same draws shifted per dimension: variances match, means differ by the
  // shift, so the distance is the squared shift norm. Values and shifts sit
  // on a dyadic grid so the float additions are exact.
  std::vector<float> base(12 * 6);
  Rng quantized(4210);
  for (auto& v : base) v = float(quantized.uniform_int(2048) - 1024) / 1024.0f;
  auto grid = Tensor<float>::from({12, 6}, base);
  std::vector<float> shift = {0.5f, -1.0f, 0.25f, 0.0f, 2.0f, -0.125f};
  std::vector<float> moved = base;
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 6; ++k) moved[i * 6 + k] += shift[k];
  auto fake = Tensor<float>::from({12, 6}, moved);
  double expected = 0;
  for (float s : shift) expected += double(s) * s;
  CHECK(std::fabs(fvd_proxy(grid, fake) - expected) < 1e-12);
  CHECK(fvd_proxy(grid, fake) == fvd_proxy(fake, grid));
}

TEST_CASE("fvd proxy matches the literal formula and rejects bad shapes") {
  Rng rng(422);
  for (int trial = 0; trial < 50; ++trial) {
    const int n1 = 2 + rng.uniform_int(9);
    const int n2 = 2 + rng.uniform_int(9);
    const int d = 1 + rng.uniform_int(8);
    auto a = random_mat(n1, d, rng, 1.0 + rng.uniform());
    auto b = random_mat(n2, d, rng, 1.0 + rng.uniform());
    const double got = fvd_proxy(a, b);
    CHECK(std::fabs(got - fvd_oracle(a, b)) < 1e-9);
    CHECK(got >= 0.0);
  }
  auto ok = random_mat(4, 3, rng);
  CHECK_THROWS_AS(fvd_proxy(random_mat(1, 3, rng), ok), std::invalid_argument);
  CHECK_THROWS_AS(fvd_proxy(ok, random_mat(1, 3, rng)), std::invalid_argument);
  CHECK_THROWS_AS(fvd_proxy(ok, random_mat(4, 2, rng)), std::invalid_argument);
  auto rank1 = Tensor<float>::from({3}, std::vector<float>{1, 2, 3});
  CHECK_THROWS_AS(fvd_proxy(rank1, ok), std::invalid_argument);
}

TEST_CASE("retrieval accuracy pinned cases") {
  // Matching orthogonal rows retrieve perfectly.
  auto eye = Tensor<float>::from({3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(retrieval_accuracy(eye, eye) == 1.0);

  // Swapped pairing: every query's own column scores 0 while the wrong one
  // scores 1.
  auto swapped = Tensor<float>::from({2, 2}, std::vector<float>{0, 1, 1, 0});
  auto ident = Tensor<float>::from({2, 2}, std::vector<float>{1, 0, 0, 1});
  CHECK(retrieval_accuracy(ident, swapped) == 0.0);

  // Duplicate candidate rows tie with the correct one; ties are failures, so
  // both duplicated rows lose and only the distinct third row scores.
  auto g = Tensor<float>::from({3, 2}, std::vector<float>{1, 0, 1, 0, 0, 1});
  auto f = Tensor<float>::from({3, 2}, std::vector<float>{1, 0, 1, 0, 0, 1});
  CHECK(retrieval_accuracy(g, f) == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(
      retrieval_accuracy(Tensor<float>::from({1, 2}, std::vector<float>{1, 0}),
                         Tensor<float>::from({1, 2}, std::vector<float>{1, 0})),
      std::invalid_argument);
  auto zero_row = Tensor<float>::from({2, 2}, std::vector<float>{1, 0, 0, 0});
  CHECK_THROWS_AS(retrieval_accuracy(zero_row, ident), std::invalid_argument);
  CHECK_THROWS_AS(retrieval_accuracy(ident, zero_row), std::invalid_argument);
  CHECK_THROWS_AS(retrieval_accuracy(ident, Tensor<float>::from({3, 2}, std::vector<float>(6, 1.f))),
                  std::invalid_argument);
}

TEST_CASE("retrieval accuracy is scale invariant and near chance on noise") {
  Rng rng(431);
  auto g = random_mat(8, 16, rng);
  auto f = random_mat(8, 16, rng);
  const double base = retrieval_accuracy(g, f);
  std::vector<float> scaled(g.value().begin(), g.value().end());
  Rng scales(432);
  for (int i = 0; i < 8; ++i) {
    const float s = float(0.1 + 5.0 * scales.uniform());
    for (int k = 0; k < 16; ++k) scaled[i * 16 + k] *= s;
  }
  CHECK(retrieval_accuracy(Tensor<float>::from({8, 16}, scaled), f) == base);

  // Independent random pairs: expected accuracy is 1/B.
  Rng mc(433);
  double total = 0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    auto gq = random_mat(8, 16, mc);
    auto fq = random_mat(8, 16, mc);
    total += retrieval_accuracy(gq, fq);
  }
  const double mean = total / trials;
  CHECK(std::fabs(mean - 0.125) < 0.04);
}

TEST_CASE("video features separate static from moving content") {
  FrameEncoderConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.patch = 4;
  cfg.backbone_dim = 16;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  Rng rng(441);
  FrameEncoder<float> enc(cfg, rng);

  // Constant video: difference half exactly zero, mean half equals the
  // single-frame vector.
  auto frame = random_frame(16, 16, rng);
  std::vector<Tensor<float>> still(4, frame);
  auto feat = video_feature(enc, still);
  REQUIRE(int(feat.size()) == 16);
  auto single = enc(frame).frame_vector;
  auto sv = single.value();
  for (int k = 0; k < 8; ++k) {
    CHECK(feat[k] == doctest::Approx(sv[k]).epsilon(1e-5));
    CHECK(feat[8 + k] == 0.0f);
  }

  // A video with changing frames must move the difference half away from 0.
  std::vector<Tensor<float>> moving;
  for (int t = 0; t < 4; ++t) moving.push_back(random_frame(16, 16, rng));
  auto mfeat = video_feature(enc, moving);
  double diff_mass = 0;
  for (int k = 0; k < 8; ++k) diff_mass += std::fabs(mfeat[8 + k]);
  CHECK(diff_mass > 1e-4);

  // Single-frame video: defined, difference half zero.
  auto one = video_feature(enc, {frame});
  for (int k = 0; k < 8; ++k) CHECK(one[8 + k] == 0.0f);
  CHECK_THROWS_AS(video_feature(enc, {}), std::invalid_argument);

  auto mat = video_feature_matrix(enc, {still, moving});
  REQUIRE(mat.extent(0) == 2);
  REQUIRE(mat.extent(1) == 16);
  auto mv = mat.value();
  for (int k = 0; k < 16; ++k) CHECK(mv[k] == feat[k]);
  for (int k = 0; k < 16; ++k) CHECK(mv[16 + k] == mfeat[k]);
}

TEST_CASE("summaries and csv emission") {
  auto s = summarize("ssim", {1.0, 2.0, 3.0});
  CHECK(s.mean == 2.0);
  CHECK(s.std_dev == 1.0);
  CHECK(s.repeats == 3);
  auto single = summarize("fvd", {0.5});
  CHECK(single.mean == 0.5);
  CHECK(single.std_dev == 0.0);
  CHECK(single.repeats == 1);
  CHECK_THROWS_AS(summarize("x", {}), std::invalid_argument);

  const std::string csv = metrics_csv({s, single}, "deadbeef");
  CHECK(csv ==
        "metric,mean,std,repeats,config_hash\n"
        "ssim,2,1,3,deadbeef\n"
        "fvd,0.5,0,1,deadbeef\n");
}

TEST_SUITE_END();
