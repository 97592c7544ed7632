#pragma once
// Frame encoder: turns one frame into a grid of sub-region vectors plus a
// pooled frame vector. Used only while pretraining the graph encoder and for
// evaluation features; synthesis never touches it.
//
// Composition: non-overlapping patches -> linear embedding -> a small stack
// of full-attention transformer layers -> pointwise reduction to the output
// width. No positional encodings anywhere: a constant frame therefore yields
// identical sub-region vectors, and the frame vector is by construction the
// pooled mean of the feature map passed through one linear layer.

#include <stdexcept>
#include <string>
#include <vector>

#include "sgs/nn.hpp"
#include "sgs/rng.hpp"
#include "sgs/tensor.hpp"

namespace sgs {

struct FrameEncoderConfig {
  int height = 16;
  int width = 16;
  int channels = 1;
  int patch = 4;
  int backbone_dim = 32;  // width of the mixing stack
  int dim = 32;           // output feature dimension
  int layers = 1;
  int heads = 4;

  int grid_h() const { return height / patch; }
  int grid_w() const { return width / patch; }

  void validate() const {
    if (height < 1 || width < 1 || channels < 1 || patch < 1)
      throw std::invalid_argument("frame encoder: non-positive extent");
    if (height % patch != 0 || width % patch != 0)
      throw std::invalid_argument("frame encoder: frame size not divisible by patch size");
    if (backbone_dim < 1 || dim < 1 || layers < 0)
      throw std::invalid_argument("frame encoder: bad dims");
    if (layers > 0 && backbone_dim % heads != 0)
      throw std::invalid_argument("frame encoder: backbone dim must be a multiple of heads");
  }
};

template <class S>
struct FrameFeatures {
  Tensor<S> feature_map;   // [h*w, dim], rows in (row, col) raster order
  Tensor<S> frame_vector;  // [dim]
  int h = 0;
  int w = 0;
};

template <class S>
struct FrameEncoder {
  FrameEncoderConfig cfg;
  Linear<S> patch_embed;  // [patch*patch*channels, backbone_dim]
  std::vector<TransformerLayer<S>> stack;
  Linear<S> reduce;     // [backbone_dim, dim] pointwise
  Linear<S> pool_proj;  // [dim, dim], applied to the spatial mean

  FrameEncoder() = default;
  FrameEncoder(FrameEncoderConfig config, Rng& rng) : cfg(config) {
    cfg.validate();
    patch_embed = Linear<S>(cfg.patch * cfg.patch * cfg.channels, cfg.backbone_dim, rng);
    TransformerLayerConfig lc;
    lc.dim = cfg.backbone_dim;
    lc.heads = cfg.heads;
    for (int l = 0; l < cfg.layers; ++l) stack.emplace_back(lc, rng);
    reduce = Linear<S>(cfg.backbone_dim, cfg.dim, rng);
    pool_proj = Linear<S>(cfg.dim, cfg.dim, rng);
  }

  // frame: [H, W, C] with values in [0, 1].
  FrameFeatures<S> operator()(const Tensor<S>& frame) const {
    require_rank(frame, 3, "frame_encoder");
    if (frame.extent(0) != cfg.height || frame.extent(1) != cfg.width ||
        frame.extent(2) != cfg.channels)
      throw std::invalid_argument("frame_encoder: frame shape mismatch");
    Tensor<S> x = patch_embed(patchify(frame, cfg.patch));
    for (const auto& layer : stack) x = layer(x);
    FrameFeatures<S> out;
    out.feature_map = reduce(x);
    out.h = cfg.grid_h();
    out.w = cfg.grid_w();
    auto pooled = mean_rows(out.feature_map);
    out.frame_vector = reshape(pool_proj(reshape(pooled, {1, cfg.dim})), {cfg.dim});
    return out;
  }

  void collect(ParamMap<S>& map, const std::string& prefix) const {
    patch_embed.collect(map, prefix + ".patch");
    for (size_t l = 0; l < stack.size(); ++l)
      stack[l].collect(map, prefix + ".layer" + std::to_string(l));
    reduce.collect(map, prefix + ".reduce");
    pool_proj.collect(map, prefix + ".pool");
  }
};

}  // namespace sgs
