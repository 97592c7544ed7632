#include "sgs/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sgs {

namespace {

void require_frame(const Tensor<float>& t, const char* what) {
  if (t.shape().size() != 3 || t.extent(2) != 1)
    throw std::invalid_argument(std::string(what) + ": expected an [H,W,1] frame");
  if (t.extent(0) < 8 || t.extent(1) < 8)
    throw std::invalid_argument(std::string(what) + ": frame smaller than one 8x8 window");
}

}  // namespace

double ssim(const Tensor<float>& a, const Tensor<float>& b, double dynamic_range) {
  require_frame(a, "ssim");
  require_frame(b, "ssim");
  if (a.extent(0) != b.extent(0) || a.extent(1) != b.extent(1))
    throw std::invalid_argument("ssim: frame shapes differ");
  if (!(dynamic_range > 0)) throw std::invalid_argument("ssim: dynamic range must be positive");

  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const int h = a.extent(0);
  const int w = a.extent(1);
  const auto av = a.value();
  const auto bv = b.value();

  double total = 0;
  int windows = 0;
  for (int wy = 0; wy + 8 <= h; wy += 8) {
    for (int wx = 0; wx + 8 <= w; wx += 8) {
      double mu_a = 0, mu_b = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          mu_a += av[(wy + y) * w + (wx + x)];
          mu_b += bv[(wy + y) * w + (wx + x)];
        }
      mu_a /= 64.0;
      mu_b /= 64.0;
      double var_a = 0, var_b = 0, cov = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const double da = av[(wy + y) * w + (wx + x)] - mu_a;
          const double db = bv[(wy + y) * w + (wx + x)] - mu_b;
          var_a += da * da;
          var_b += db * db;
          cov += da * db;
        }
      var_a /= 64.0;
      var_b /= 64.0;
      cov /= 64.0;
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
      ++windows;
    }
  }
  return total / windows;
}

double fvd_proxy(const Tensor<float>& real_features, const Tensor<float>& fake_features) {
  if (real_features.shape().size() != 2 || fake_features.shape().size() != 2)
    throw std::invalid_argument("fvd_proxy: expected [N,d] feature matrices");
  const int d = real_features.extent(1);
  if (fake_features.extent(1) != d)
    throw std::invalid_argument("fvd_proxy: feature dimensions differ");
  const int n1 = real_features.extent(0);
  const int n2 = fake_features.extent(0);
  if (n1 < 2 || n2 < 2)
    throw std::invalid_argument("fvd_proxy: need at least two videos per set");

  const auto r = real_features.value();
  const auto f = fake_features.value();
  double dist = 0;
  for (int k = 0; k < d; ++k) {
    double mu1 = 0, mu2 = 0;
    for (int i = 0; i < n1; ++i) mu1 += r[i * d + k];
    for (int i = 0; i < n2; ++i) mu2 += f[i * d + k];
    mu1 /= n1;
    mu2 /= n2;
    double v1 = 0, v2 = 0;
    for (int i = 0; i < n1; ++i) v1 += (r[i * d + k] - mu1) * (r[i * d + k] - mu1);
    for (int i = 0; i < n2; ++i) v2 += (f[i * d + k] - mu2) * (f[i * d + k] - mu2);
    v1 /= n1 - 1;
    v2 /= n2 - 1;
    const double dm = mu1 - mu2;
    // Algebraically s1 + s2 - 2*sqrt(s1*s2); this form cannot go negative.
    const double ds = std::sqrt(v1) - std::sqrt(v2);
    dist += dm * dm + ds * ds;
  }
  return dist;
}

double retrieval_accuracy(const Tensor<float>& g, const Tensor<float>& f) {
  if (g.shape().size() != 2 || f.shape().size() != 2)
    throw std::invalid_argument("retrieval_accuracy: expected [B,d] matrices");
  const int b = g.extent(0);
  const int d = g.extent(1);
  if (f.extent(0) != b || f.extent(1) != d)
    throw std::invalid_argument("retrieval_accuracy: shape mismatch");
  if (b < 2) throw std::invalid_argument("retrieval_accuracy: need at least two pairs");

  const auto gv = g.value();
  const auto fv = f.value();
  std::vector<double> g_norm(b), f_norm(b);
  for (int i = 0; i < b; ++i) {
    double sg = 0, sf = 0;
    for (int k = 0; k < d; ++k) {
      sg += double(gv[i * d + k]) * gv[i * d + k];
      sf += double(fv[i * d + k]) * fv[i * d + k];
    }
    if (sg == 0 || sf == 0)
      throw std::invalid_argument("retrieval_accuracy: zero-norm row");
    g_norm[i] = std::sqrt(sg);
    f_norm[i] = std::sqrt(sf);
  }

  auto cosine = [&](int i, int j) {
    double dot = 0;
    for (int k = 0; k < d; ++k) dot += double(gv[i * d + k]) * fv[j * d + k];
    return dot / (g_norm[i] * f_norm[j]);
  };
  int hits = 0;
  for (int i = 0; i < b; ++i) {
    const double own = cosine(i, i);
    bool beaten_or_tied = false;
    for (int j = 0; j < b && !beaten_or_tied; ++j)
      if (j != i && cosine(i, j) >= own) beaten_or_tied = true;
    if (!beaten_or_tied) ++hits;
  }
  return double(hits) / b;
}

std::vector<float> video_feature(const FrameEncoder<float>& encoder,
                                 const std::vector<Tensor<float>>& video) {
  if (video.empty()) throw std::invalid_argument("video_feature: empty video");
  NoGradGuard guard;
  const int t = int(video.size());
  std::vector<std::vector<float>> vecs;
  vecs.reserve(t);
  for (const auto& frame : video) {
    auto feats = encoder(frame);
    auto span = feats.frame_vector.value();
    vecs.emplace_back(span.begin(), span.end());
  }
  const int dim = int(vecs[0].size());
  std::vector<float> out(2 * dim, 0.0f);
  for (int i = 0; i < t; ++i)
    for (int k = 0; k < dim; ++k) out[k] += vecs[i][k];
  for (int k = 0; k < dim; ++k) out[k] /= float(t);
  if (t > 1) {
    for (int i = 1; i < t; ++i)
      for (int k = 0; k < dim; ++k) out[dim + k] += std::fabs(vecs[i][k] - vecs[i - 1][k]);
    for (int k = 0; k < dim; ++k) out[dim + k] /= float(t - 1);
  }
  return out;
}

Tensor<float> video_feature_matrix(const FrameEncoder<float>& encoder,
                                   const std::vector<std::vector<Tensor<float>>>& videos) {
  if (videos.empty()) throw std::invalid_argument("video_feature_matrix: no videos");
  std::vector<float> data;
  int dim = -1;
  for (const auto& video : videos) {
    auto feat = video_feature(encoder, video);
    if (dim < 0) dim = int(feat.size());
    data.insert(data.end(), feat.begin(), feat.end());
  }
  return Tensor<float>::from({int(videos.size()), dim}, data);
}

MetricSummary summarize(const std::string& metric, const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  MetricSummary s;
  s.metric = metric;
  s.repeats = int(values.size());
  for (double v : values) s.mean += v;
  s.mean /= s.repeats;
  if (s.repeats > 1) {
    double acc = 0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(acc / (s.repeats - 1));
  }
  return s;
}

std::string metrics_csv(const std::vector<MetricSummary>& rows, const std::string& config_hash) {
  std::string out = "metric,mean,std,repeats,config_hash\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%d", r.mean, r.std_dev, r.repeats);
    out += r.metric;
    out += ',';
    out += buf;
    out += ',';
    out += config_hash;
    out += '\n';
  }
  return out;
}

}  // namespace sgs
