#pragma once
// Vector-quantized autoencoder over frames. The encoder maps non-overlapping
// stride x stride patches through a two-layer perceptron to one code-dim
// vector per grid cell; quantization snaps each cell to its Euclidean-nearest
// codebook row (ties to the lowest index); the decoder mirrors the encoder
// and reassembles the frame.
//
// Gradient flow follows the straight-through estimator: the decoder input is
// z_e + detach(z_q - z_e), so reconstruction gradients reach the encoder as
// if quantization were the identity, the codebook learns only from the
// codebook term, and the commitment term pulls encoder outputs toward their
// codes. Both auxiliary terms are per-element means so their scale is
// commensurate with the reconstruction MSE regardless of grid size.

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgs/nn.hpp"
#include "sgs/rng.hpp"
#include "sgs/tensor.hpp"
#include "sgs/tensor_io.hpp"

namespace sgs {

struct VqConfig {
  int height = 16;
  int width = 16;
  int channels = 1;
  int stride = 4;  // total spatial downsampling
  int codebook_size = 64;
  int code_dim = 32;
  int hidden = 64;
  double beta = 0.25;  // commitment weight

  int grid_h() const { return height / stride; }
  int grid_w() const { return width / stride; }
  int cells() const { return grid_h() * grid_w(); }

  void validate() const {
    if (height < 1 || width < 1 || channels < 1 || stride < 1)
      throw std::invalid_argument("vq: non-positive extent");
    if (height % stride != 0 || width % stride != 0)
      throw std::invalid_argument("vq: frame size not divisible by stride");
    if (codebook_size < 2) throw std::invalid_argument("vq: codebook needs at least 2 codes");
    if (codebook_size > 65535) throw std::invalid_argument("vq: codebook exceeds u16 range");
    if (code_dim < 1 || hidden < 1) throw std::invalid_argument("vq: bad dims");
    if (!(beta >= 0)) throw std::invalid_argument("vq: beta must be nonnegative");
  }
};

template <class S>
struct QuantizeResult {
  std::vector<int> indices;   // one per grid cell, row-major
  Tensor<S> z_q;              // [cells, code_dim] straight-through
  Tensor<S> codebook_loss;    // scalar, gradient reaches the codebook only
  Tensor<S> commitment_loss;  // scalar, gradient reaches the encoder only
};

template <class S>
struct VqAutoencoder {
  VqConfig cfg;
  Linear<S> enc1, enc2;  // patch -> hidden -> code_dim
  Linear<S> dec1, dec2;  // code_dim -> hidden -> patch
  Tensor<S> codebook;    // [K, code_dim]

  VqAutoencoder() = default;
  VqAutoencoder(VqConfig config, Rng& rng) : cfg(config) {
    cfg.validate();
    const int patch_dim = cfg.stride * cfg.stride * cfg.channels;
    enc1 = Linear<S>(patch_dim, cfg.hidden, rng);
    enc2 = Linear<S>(cfg.hidden, cfg.code_dim, rng);
    dec1 = Linear<S>(cfg.code_dim, cfg.hidden, rng);
    dec2 = Linear<S>(cfg.hidden, patch_dim, rng);
    codebook = normal_param<S>({cfg.codebook_size, cfg.code_dim}, rng);
  }

  // frame [H, W, C] -> pre-quantization grid [cells, code_dim]
  Tensor<S> encode(const Tensor<S>& frame) const {
    require_rank(frame, 3, "vq encode");
    if (frame.extent(0) != cfg.height || frame.extent(1) != cfg.width ||
        frame.extent(2) != cfg.channels)
      throw std::invalid_argument("vq encode: frame shape mismatch");
    return enc2(gelu(enc1(patchify(frame, cfg.stride))));
  }

  // Nearest codebook row per cell; lowest index wins ties exactly.
  std::vector<int> nearest_codes(const Tensor<S>& z_e) const {
    require_rank(z_e, 2, "vq quantize");
    if (z_e.extent(1) != cfg.code_dim)
      throw std::invalid_argument("vq quantize: code dim mismatch");
    const int n = z_e.extent(0), d = cfg.code_dim, K = cfg.codebook_size;
    auto zv = z_e.value();
    auto cv = codebook.value();
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      S best = std::numeric_limits<S>::infinity();
      int arg = 0;
      for (int k = 0; k < K; ++k) {
        S dist = 0;
        for (int j = 0; j < d; ++j) {
          const S diff = zv[static_cast<size_t>(i) * d + j] - cv[static_cast<size_t>(k) * d + j];
          dist += diff * diff;
        }
        if (dist < best) {
          best = dist;
          arg = k;
        }
      }
      idx[static_cast<size_t>(i)] = arg;
    }
    return idx;
  }

  QuantizeResult<S> quantize(const Tensor<S>& z_e) const {
    QuantizeResult<S> out;
    out.indices = nearest_codes(z_e);
    auto codes = take_rows(codebook, out.indices);
    out.z_q = add(z_e, detach(sub(codes, z_e)));
    out.codebook_loss = mse(detach(z_e), codes);
    out.commitment_loss = mse(z_e, detach(codes));
    return out;
  }

  // Training-path decode: no clamping, so gradients never die at saturation.
  Tensor<S> decode(const Tensor<S>& z) const {
    require_rank(z, 2, "vq decode");
    if (z.extent(0) != cfg.cells() || z.extent(1) != cfg.code_dim)
      throw std::invalid_argument("vq decode: grid shape mismatch");
    return unpatchify(dec2(gelu(dec1(z))), cfg.height, cfg.width, cfg.channels, cfg.stride);
  }

  // Emission decode from stored indices, clamped to the frame value range.
  Tensor<S> decode_indices(const std::vector<int>& indices) const {
    if (static_cast<int>(indices.size()) != cfg.cells())
      throw std::invalid_argument("vq decode: wrong cell count");
    for (int k : indices)
      if (k < 0 || k >= cfg.codebook_size)
        throw std::invalid_argument("vq decode: code index out of range");
    NoGradGuard ng;
    return clamp01(decode(take_rows(codebook, indices)));
  }

  // Full inference round trip of one frame.
  Tensor<S> reconstruct(const Tensor<S>& frame) const {
    NoGradGuard ng;
    return decode_indices(nearest_codes(encode(frame)));
  }

  // Training loss of one frame: reconstruction MSE (pre-clamp) plus the two
  // quantization terms. Returns the individual scalars for logging.
  struct StepLoss {
    Tensor<S> total, recon, codebook_term, commitment;
    std::vector<int> indices;
  };
  StepLoss training_loss(const Tensor<S>& frame) const {
    auto z_e = encode(frame);
    auto q = quantize(z_e);
    StepLoss out;
    out.recon = mse(decode(q.z_q), frame);
    out.codebook_term = q.codebook_loss;
    out.commitment = q.commitment_loss;
    out.total = add(out.recon, add(out.codebook_term, scale(out.commitment, S(cfg.beta))));
    out.indices = std::move(q.indices);
    return out;
  }

  // Seeds the codebook from observed encoder outputs: rows are sampled
  // without replacement (with small jitter once samples run short), so the
  // initial codes live where the data lives instead of at the origin.
  void init_codebook_from(const std::vector<Tensor<S>>& grids, Rng& rng) {
    std::vector<const S*> rows;
    for (const auto& g : grids) {
      require_rank(g, 2, "vq init");
      if (g.extent(1) != cfg.code_dim) throw std::invalid_argument("vq init: code dim mismatch");
      for (int i = 0; i < g.extent(0); ++i)
        rows.push_back(&g.value()[static_cast<size_t>(i) * cfg.code_dim]);
    }
    if (rows.empty()) throw std::invalid_argument("vq init: no encoder outputs");
    for (size_t i = rows.size() - 1; i > 0; --i)
      std::swap(rows[i], rows[static_cast<size_t>(rng.uniform_int(static_cast<int>(i) + 1))]);
    auto cv = codebook.mutable_value();
    for (int k = 0; k < cfg.codebook_size; ++k) {
      const S* src = rows[static_cast<size_t>(k) % rows.size()];
      const bool jitter = static_cast<size_t>(k) >= rows.size();
      for (int j = 0; j < cfg.code_dim; ++j)
        cv[static_cast<size_t>(k) * cfg.code_dim + j] =
            src[j] + (jitter ? static_cast<S>(0.01 * rng.normal()) : S(0));
    }
  }

  // Moves codes unused in the observed batch onto random encoder outputs;
  // returns how many were revived. Keeps the codebook from collapsing onto
  // a few survivors early in training.
  int revive_dead_codes(const std::vector<int>& used_indices, const Tensor<S>& z_e_sample,
                        Rng& rng) {
    require_rank(z_e_sample, 2, "vq revive");
    if (z_e_sample.extent(1) != cfg.code_dim || z_e_sample.extent(0) < 1)
      throw std::invalid_argument("vq revive: bad sample grid");
    std::vector<char> used(static_cast<size_t>(cfg.codebook_size), 0);
    for (int k : used_indices) used[static_cast<size_t>(k)] = 1;
    auto cv = codebook.mutable_value();
    auto zv = z_e_sample.value();
    const int n = z_e_sample.extent(0);
    int revived = 0;
    for (int k = 0; k < cfg.codebook_size; ++k) {
      if (used[static_cast<size_t>(k)]) continue;
      const int pick = rng.uniform_int(n);
      for (int j = 0; j < cfg.code_dim; ++j)
        cv[static_cast<size_t>(k) * cfg.code_dim + j] =
            zv[static_cast<size_t>(pick) * cfg.code_dim + j] +
            static_cast<S>(0.01 * rng.normal());
      ++revived;
    }
    return revived;
  }

  void collect(ParamMap<S>& map, const std::string& prefix) const {
    enc1.collect(map, prefix + ".enc1");
    enc2.collect(map, prefix + ".enc2");
    dec1.collect(map, prefix + ".dec1");
    dec2.collect(map, prefix + ".dec2");
    map.add(prefix + ".codebook", codebook);
  }
};

// --- Latent grid files ---
// Little-endian binary: magic "SSGL", u32 frame count T, u32 grid height,
// u32 grid width, u32 codebook size K, then T*h*w u16 code indices.

inline std::string encode_latent_file(const std::vector<std::vector<int>>& frames, int grid_h,
                                      int grid_w, int codebook_size) {
  std::string out = "SSGL";
  detail::put_u32(out, static_cast<std::uint32_t>(frames.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(grid_h));
  detail::put_u32(out, static_cast<std::uint32_t>(grid_w));
  detail::put_u32(out, static_cast<std::uint32_t>(codebook_size));
  for (const auto& frame : frames) {
    if (static_cast<int>(frame.size()) != grid_h * grid_w)
      throw std::invalid_argument("latent file: cell count mismatch");
    for (int k : frame) {
      if (k < 0 || k >= codebook_size)
        throw std::invalid_argument("latent file: index out of range");
      out.push_back(static_cast<char>(k & 0xff));
      out.push_back(static_cast<char>((k >> 8) & 0xff));
    }
  }
  return out;
}

struct LatentFile {
  int grid_h = 0;
  int grid_w = 0;
  int codebook_size = 0;
  std::vector<std::vector<int>> frames;
};

inline LatentFile decode_latent_file(const std::string& bytes, const std::string& what) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || bytes.compare(0, 4, "SSGL") != 0)
    throw std::runtime_error(what + ": not a latent grid file");
  LatentFile out;
  const std::uint32_t T = detail::get_u32(p + 4);
  out.grid_h = static_cast<int>(detail::get_u32(p + 8));
  out.grid_w = static_cast<int>(detail::get_u32(p + 12));
  out.codebook_size = static_cast<int>(detail::get_u32(p + 16));
  if (out.grid_h < 1 || out.grid_w < 1 || out.codebook_size < 2 ||
      out.codebook_size > 65535 || T > (1u << 20))
    throw std::runtime_error(what + ": implausible latent header");
  const size_t cells = static_cast<size_t>(out.grid_h) * out.grid_w;
  if (bytes.size() - 20 != T * cells * 2)
    throw std::runtime_error(what + ": latent payload size mismatch");
  size_t pos = 20;
  out.frames.assign(T, std::vector<int>(cells));
  for (auto& frame : out.frames)
    for (auto& k : frame) {
      k = static_cast<int>(p[pos]) | (static_cast<int>(p[pos + 1]) << 8);
      pos += 2;
      if (k >= out.codebook_size)
        throw std::runtime_error(what + ": code index out of range");
    }
  return out;
}

}  // namespace sgs
