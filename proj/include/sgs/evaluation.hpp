#pragma once
// Quantitative metrics: windowed SSIM, a Fréchet distance between
// diagonal-Gaussian feature fits standing in for FVD, and top-1 graph-frame
// retrieval accuracy. All pure functions over values; video features come
// from a caller-supplied (frozen) frame encoder.

#include <string>
#include <vector>

#include "sgs/frame_encoder.hpp"
#include "sgs/tensor.hpp"

namespace sgs {

// Mean SSIM over non-overlapping 8x8 windows; partial edge windows are
// dropped. Frames are [H,W,1] with H,W >= 8; `dynamic_range` is the value
// span L in C1=(0.01L)^2, C2=(0.03L)^2.
double ssim(const Tensor<float>& a, const Tensor<float>& b, double dynamic_range = 1.0);

// Fréchet distance between diagonal-Gaussian fits of two feature sets
// [N,d] / [M,d] (unbiased variances, so each set needs at least two rows):
// ||mu1 - mu2||^2 + sum_k (sqrt(v1k) - sqrt(v2k))^2.
double fvd_proxy(const Tensor<float>& real_features, const Tensor<float>& fake_features);

// Fraction of rows i whose cosine-nearest row of f is f_i; ties fail.
double retrieval_accuracy(const Tensor<float>& g, const Tensor<float>& f);

// Per-video feature: mean frame vector concatenated with the mean absolute
// temporal difference of frame vectors (zeros for single-frame videos).
std::vector<float> video_feature(const FrameEncoder<float>& encoder,
                                 const std::vector<Tensor<float>>& video);

// Stacks video_feature rows into [N, 2*dim].
Tensor<float> video_feature_matrix(const FrameEncoder<float>& encoder,
                                   const std::vector<std::vector<Tensor<float>>>& videos);

struct MetricSummary {
  std::string metric;
  double mean = 0;
  double std_dev = 0;
  int repeats = 0;
};

// Mean and unbiased standard deviation over repeats (0 when repeats == 1).
MetricSummary summarize(const std::string& metric, const std::vector<double>& values);

// CSV with header metric,mean,std,repeats,config_hash.
std::string metrics_csv(const std::vector<MetricSummary>& rows, const std::string& config_hash);

}  // namespace sgs
