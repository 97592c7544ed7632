#include <cmath>
#include <vector>

#include "doctest.h"
#include "sgs/losses.hpp"
#include "sgs/nn.hpp"
#include "sgs/rng.hpp"

using sgs::Tensor;

// Independent oracles: literal nested-loop transcriptions of the loss
// definitions in plain double arithmetic, with no shared code beyond the
// standard library. Deliberately naive (no max-subtraction) since all
// scores here are cosines or single-exp matching values, safely in range.
namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(const Vec& a, const Vec& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

// Symmetric InfoNCE over matched pairs: M[i][j] is the score of (g_i, f_j).
double info_nce(const Mat& M) {
  const size_t n = M.size();
  double loss = 0;
  for (size_t i = 0; i < n; ++i) {
    double col = 0, row = 0;
    for (size_t j = 0; j < n; ++j) {
      col += std::exp(M[j][i]);
      row += std::exp(M[i][j]);
    }
    loss -= std::log(std::exp(M[i][i]) / col);
    loss -= std::log(std::exp(M[i][i]) / row);
  }
  return loss;
}

double intra(const Mat& g, const Mat& f) {
  const size_t T = g.size();
  Mat M(T, Vec(T));
  for (size_t i = 0; i < T; ++i)
    for (size_t j = 0; j < T; ++j) M[i][j] = cosine(g[i], f[j]);
  return info_nce(M);
}

double inter(const std::vector<Mat>& g, const std::vector<Mat>& f) {
  const size_t B = g.size(), T = g[0].size();
  double loss = 0;
  for (size_t t = 0; t < T; ++t) {
    Mat M(B, Vec(B));
    for (size_t i = 0; i < B; ++i)
      for (size_t j = 0; j < B; ++j) M[i][j] = cosine(g[i][t], f[j][t]);
    loss += info_nce(M);
  }
  return loss;
}

Mat visual_context(const Mat& e, const Mat& r) {
  const size_t ng = e.size(), hw = r.size(), d = e[0].size();
  Mat simdot(ng, Vec(hw));
  for (size_t j = 0; j < hw; ++j) {
    double denom = 0;
    for (size_t gi = 0; gi < ng; ++gi) denom += std::exp(dot(e[gi], r[j]));
    for (size_t i = 0; i < ng; ++i) simdot[i][j] = std::exp(dot(e[i], r[j])) / denom;
  }
  Mat c(ng, Vec(d, 0.0));
  for (size_t i = 0; i < ng; ++i) {
    double wdenom = 0;
    for (size_t k = 0; k < hw; ++k) wdenom += std::exp(simdot[i][k]);
    for (size_t j = 0; j < hw; ++j) {
      const double w = std::exp(simdot[i][j]) / wdenom;
      for (size_t k = 0; k < d; ++k) c[i][k] += w * r[j][k];
    }
  }
  return c;
}

double matching(const Mat& e, const Mat& r) {
  Mat c = visual_context(e, r);
  double s = 0;
  for (size_t i = 0; i < e.size(); ++i) s += std::exp(cosine(e[i], c[i]));
  return std::log(s);
}

double finegrain(const std::vector<Mat>& es, const std::vector<Mat>& rs) {
  const size_t P = es.size();
  Mat M(P, Vec(P));
  for (size_t i = 0; i < P; ++i)
    for (size_t j = 0; j < P; ++j) M[i][j] = matching(es[i], rs[j]);
  return info_nce(M);
}

Mat random_mat(int rows, int cols, sgs::Rng& rng) {
  Mat m(rows, Vec(cols));
  for (auto& row : m)
    for (auto& v : row) v = rng.normal();
  return m;
}

Tensor<double> to_tensor(const Mat& m) {
  std::vector<double> flat;
  for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor<double>::from({static_cast<int>(m.size()), static_cast<int>(m[0].size())},
                              flat);
}

Tensor<double> to_tensor3(const std::vector<Mat>& ms) {
  std::vector<double> flat;
  for (const auto& m : ms)
    for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor<double>::from({static_cast<int>(ms.size()), static_cast<int>(ms[0].size()),
                               static_cast<int>(ms[0][0].size())},
                              flat);
}

}  // namespace oracle

TEST_SUITE("losses") {

TEST_CASE("intra loss matches the nested-loop oracle on random inputs") {
  auto rng = sgs::Rng(51);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + rng.uniform_int(4), d = 2 + rng.uniform_int(7);
    auto g = oracle::random_mat(T, d, rng);
    auto f = oracle::random_mat(T, d, rng);
    const double got = sgs::intra_loss(oracle::to_tensor(g), oracle::to_tensor(f)).item();
    CHECK(std::abs(got - oracle::intra(g, f)) < 1e-6);
  }
}

TEST_CASE("inter loss matches the nested-loop oracle on random inputs") {
  auto rng = sgs::Rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const int B = 1 + rng.uniform_int(4), T = 1 + rng.uniform_int(4), d = 2 + rng.uniform_int(7);
    std::vector<oracle::Mat> g, f;
    for (int b = 0; b < B; ++b) {
      g.push_back(oracle::random_mat(T, d, rng));
      f.push_back(oracle::random_mat(T, d, rng));
    }
    const double got = sgs::inter_loss(oracle::to_tensor3(g), oracle::to_tensor3(f)).item();
    CHECK(std::abs(got - oracle::inter(g, f)) < 1e-6);
  }
}

TEST_CASE("visual context matches the nested-loop oracle on random inputs") {
  auto rng = sgs::Rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const int ng = 1 + rng.uniform_int(4), hw = 1 + rng.uniform_int(4),
              d = 2 + rng.uniform_int(7);
    auto e = oracle::random_mat(ng, d, rng);
    auto r = oracle::random_mat(hw, d, rng);
    auto got = sgs::visual_context(oracle::to_tensor(e), oracle::to_tensor(r));
    auto want = oracle::visual_context(e, r);
    for (int i = 0; i < ng; ++i)
      for (int k = 0; k < d; ++k) CHECK(std::abs(got.at({i, k}) - want[i][k]) < 1e-6);
  }
}

TEST_CASE("matching score and fine-grained loss match the nested-loop oracles") {
  auto rng = sgs::Rng(54);
  for (int trial = 0; trial < 100; ++trial) {
    const int P = 1 + rng.uniform_int(4), d = 2 + rng.uniform_int(7);
    std::vector<oracle::Mat> es, rs;
    std::vector<sgs::GraphFramePair<double>> pairs;
    for (int p = 0; p < P; ++p) {
      es.push_back(oracle::random_mat(1 + rng.uniform_int(4), d, rng));
      rs.push_back(oracle::random_mat(1 + rng.uniform_int(4), d, rng));
      pairs.push_back({oracle::to_tensor(es.back()), oracle::to_tensor(rs.back())});
    }
    const double s00 = sgs::matching_score(pairs[0].semantic_embeddings,
                                           pairs[0].feature_map).item();
    CHECK(std::abs(s00 - oracle::matching(es[0], rs[0])) < 1e-6);
    CHECK(std::abs(sgs::finegrain_loss(pairs).item() - oracle::finegrain(es, rs)) < 1e-6);
  }
}

TEST_CASE("degenerate singleton cases are exactly zero") {
  auto rng = sgs::Rng(55);
  auto g1 = oracle::to_tensor(oracle::random_mat(1, 5, rng));
  auto f1 = oracle::to_tensor(oracle::random_mat(1, 5, rng));
  CHECK(sgs::intra_loss(g1, f1).item() == 0.0);

  std::vector<oracle::Mat> g = {oracle::random_mat(3, 4, rng)};
  std::vector<oracle::Mat> f = {oracle::random_mat(3, 4, rng)};
  CHECK(sgs::inter_loss(oracle::to_tensor3(g), oracle::to_tensor3(f)).item() == 0.0);

  std::vector<sgs::GraphFramePair<double>> one = {
      {oracle::to_tensor(oracle::random_mat(2, 4, rng)),
       oracle::to_tensor(oracle::random_mat(3, 4, rng))}};
  CHECK(sgs::finegrain_loss(one).item() == 0.0);
}

TEST_CASE("all-equal similarities give the uniform-softmax closed forms") {
  // Identical rows make every cosine equal, so each softmax is uniform.
  for (int T : {2, 3, 4}) {
    std::vector<double> grow = {1.0, 2.0, -0.5}, frow = {0.3, -1.2, 0.8};
    std::vector<double> gd, fd;
    for (int i = 0; i < T; ++i) {
      gd.insert(gd.end(), grow.begin(), grow.end());
      fd.insert(fd.end(), frow.begin(), frow.end());
    }
    auto g = Tensor<double>::from({T, 3}, gd);
    auto f = Tensor<double>::from({T, 3}, fd);
    CHECK(std::abs(sgs::intra_loss(g, f).item() - 2.0 * T * std::log(T)) < 1e-9);
  }

  const int B = 3, T = 2, d = 3;
  std::vector<double> gd, fd;
  for (int i = 0; i < B * T; ++i) {
    gd.insert(gd.end(), {1.0, 2.0, -0.5});
    fd.insert(fd.end(), {0.3, -1.2, 0.8});
  }
  auto g3 = Tensor<double>::from({B, T, d}, gd);
  auto f3 = Tensor<double>::from({B, T, d}, fd);
  CHECK(std::abs(sgs::inter_loss(g3, f3).item() - 2.0 * T * B * std::log(B)) < 1e-9);

  // P identical pairs give a constant matching-score matrix.
  const int P = 3;
  auto rng = sgs::Rng(56);
  auto e = oracle::to_tensor(oracle::random_mat(2, 4, rng));
  auto r = oracle::to_tensor(oracle::random_mat(3, 4, rng));
  std::vector<sgs::GraphFramePair<double>> pairs(P, {e, r});
  CHECK(std::abs(sgs::finegrain_loss(pairs).item() - 2.0 * P * std::log(P)) < 1e-9);
}

TEST_CASE("identity similarity matrix gives 4 ln(1 + 1/e)") {
  const double want = 4.0 * std::log(1.0 + std::exp(-1.0));

  auto g = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  CHECK(std::abs(sgs::intra_loss(g, g).item() - want) < 1e-9);

  // Batch of two one-frame videos with orthogonal unit representations.
  auto g3 = Tensor<double>::from({2, 1, 2}, {1, 0, 0, 1});
  CHECK(std::abs(sgs::inter_loss(g3, g3).item() - want) < 1e-9);

  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  CHECK(std::abs(sgs::symmetric_info_nce(eye).item() - want) < 1e-9);
}

TEST_CASE("visual context degenerate shapes") {
  auto rng = sgs::Rng(57);
  // Single sub-region: every context equals that region vector.
  auto e = oracle::to_tensor(oracle::random_mat(3, 4, rng));
  auto r1 = oracle::to_tensor(oracle::random_mat(1, 4, rng));
  auto c = sgs::visual_context(e, r1);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) CHECK(c.at({i, k}) == doctest::Approx(r1.at({0, k})).epsilon(1e-12));

  // Single embedding: inner softmax saturates to 1 everywhere, outer softmax
  // becomes uniform, so the context is the mean region vector.
  auto e1 = oracle::to_tensor(oracle::random_mat(1, 4, rng));
  auto r = oracle::to_tensor(oracle::random_mat(5, 4, rng));
  auto c1 = sgs::visual_context(e1, r);
  for (int k = 0; k < 4; ++k) {
    double mean = 0;
    for (int j = 0; j < 5; ++j) mean += r.at({j, k});
    mean /= 5;
    CHECK(std::abs(c1.at({0, k}) - mean) < 1e-12);
  }
}

TEST_CASE("matching score for a single aligned or orthogonal embedding") {
  // All regions equal e, so the context is e itself: cosine 1, score 1.
  auto e = Tensor<double>::from({1, 2}, {0.6, -0.8});
  auto r = Tensor<double>::from({3, 2}, {0.6, -0.8, 0.6, -0.8, 0.6, -0.8});
  CHECK(std::abs(sgs::matching_score(e, r).item() - 1.0) < 1e-12);

  auto r_orth = Tensor<double>::from({2, 2}, {0.8, 0.6, 0.8, 0.6});
  CHECK(std::abs(sgs::matching_score(e, r_orth).item() - 0.0) < 1e-12);
}

TEST_CASE("losses are invariant to common positive rescaling") {
  auto rng = sgs::Rng(58);
  auto g = oracle::to_tensor(oracle::random_mat(3, 5, rng));
  auto f = oracle::to_tensor(oracle::random_mat(3, 5, rng));
  const double base = sgs::intra_loss(g, f).item();
  const double scaled = sgs::intra_loss(sgs::scale(g, 3.7), sgs::scale(f, 0.21)).item();
  CHECK(std::abs(base - scaled) < 1e-9);
}

TEST_CASE("increasing matched scores decreases the loss") {
  auto rng = sgs::Rng(59);
  auto m = oracle::random_mat(3, 3, rng);
  const double before = sgs::symmetric_info_nce(oracle::to_tensor(m)).item();
  for (int i = 0; i < 3; ++i) m[i][i] += 0.5;
  const double after = sgs::symmetric_info_nce(oracle::to_tensor(m)).item();
  CHECK(after < before);
}

TEST_CASE("zero-norm rows are rejected") {
  auto g = Tensor<double>::from({2, 2}, {1, 0, 0, 0});
  auto f = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  CHECK_THROWS_AS(sgs::intra_loss(g, f), std::invalid_argument);
}

TEST_CASE("total loss is the unweighted sum") {
  auto a = Tensor<double>::scalar(1.0);
  auto b = Tensor<double>::scalar(2.0);
  auto c = Tensor<double>::scalar(3.0);
  CHECK(sgs::total_loss(a, b, c).item() == 6.0);
}

TEST_CASE("loss gradients match finite differences") {
  auto rng = sgs::Rng(60);
  auto make = [&](sgs::Shape shape) {
    auto t = Tensor<double>::zeros(shape, true);
    auto v = t.mutable_value();
    for (auto& x : v) x = rng.normal();
    return t;
  };

  auto g = make({4, 6});
  auto f = make({4, 6});
  CHECK(sgs::grad_check<double>([&] { return sgs::intra_loss(g, f); }, {g, f}, 1e-5) < 1e-4);

  auto g3 = make({3, 2, 5});
  auto f3 = make({3, 2, 5});
  CHECK(sgs::grad_check<double>([&] { return sgs::inter_loss(g3, f3); }, {g3, f3}, 1e-5) <
        1e-4);

  std::vector<sgs::GraphFramePair<double>> pairs;
  for (int p = 0; p < 3; ++p) pairs.push_back({make({2, 6}), make({4, 6})});
  std::vector<Tensor<double>> leaves;
  for (auto& pr : pairs) {
    leaves.push_back(pr.semantic_embeddings);
    leaves.push_back(pr.feature_map);
  }
  CHECK(sgs::grad_check<double>([&] { return sgs::finegrain_loss(pairs); }, leaves, 1e-5) <
        1e-4);
}

}  // TEST_SUITE
