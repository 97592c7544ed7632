#pragma once
// Autoregressive prior over discrete frame latents. A causal transformer
// consumes one interleaved sequence per video: a learned empty embedding
// first, then for each frame its graph representation and its latent-cell
// code embeddings, flattened row-major. Three insertion orders place the
// graph representations before their frame's cells, after them, or all up
// front; the empty embedding leads in every order and the sequence length is
// always 1 + T * (1 + cells).
//
// Training minimizes the mean negative log-likelihood of each latent cell
// given everything before it, plus a mean-square term that regresses the
// transformer output at every graph position onto the representation that
// was injected there. Sampling is ancestral: graph positions are injected,
// never drawn; frame 0 cells are given; each remaining cell is drawn from
// the temperature-scaled categorical at its predecessor position.
//
// Learned per-cell temporal encodings are added to the latent embeddings
// when the sequence is built (graph positions receive none), unlike the
// attention-time encodings of the graph and frame encoders.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgs/nn.hpp"
#include "sgs/rng.hpp"
#include "sgs/scenegraph.hpp"
#include "sgs/tensor.hpp"
#include "sgs/vq.hpp"
#include "sgs/vsg_encoder.hpp"

namespace sgs {

struct PriorConfig {
  int codebook_size = 64;  // K
  int cells = 16;          // latent cells per frame (grid_h * grid_w)
  int video_length = 8;    // T
  int graph_dim = 32;      // incoming graph-representation width
  int model_dim = 128;
  int layers = 4;
  int heads = 4;
  int insertion_order = 1;  // 1: rep before its frame, 2: after, 3: all reps first
  double graph_mse_weight = 1.0;

  int sequence_length() const { return 1 + video_length * (1 + cells); }

  void validate() const {
    if (codebook_size < 2) throw std::invalid_argument("prior: codebook needs at least 2 codes");
    if (cells < 1 || video_length < 1) throw std::invalid_argument("prior: empty grid or video");
    if (graph_dim < 1 || model_dim < 1 || layers < 1)
      throw std::invalid_argument("prior: bad dims");
    if (model_dim % heads != 0 || heads < 1)
      throw std::invalid_argument("prior: model dim must be a positive multiple of heads");
    if (insertion_order < 1 || insertion_order > 3)
      throw std::invalid_argument("prior: insertion order must be 1, 2, or 3");
    if (!(graph_mse_weight >= 0)) throw std::invalid_argument("prior: negative mse weight");
  }
};

enum class PriorRole { empty, graph, latent };

struct PriorPosition {
  PriorRole role;
  int t = -1;     // frame for graph/latent positions
  int cell = -1;  // cell for latent positions
};

// The fixed role of every sequence position for one order. Latent cells of a
// frame are always contiguous and row-major; frames ascend in all orders.
inline std::vector<PriorPosition> sequence_layout(int T, int cells, int order) {
  std::vector<PriorPosition> out;
  out.reserve(static_cast<size_t>(1 + T * (1 + cells)));
  out.push_back({PriorRole::empty, -1, -1});
  auto push_frame = [&](int t) {
    for (int c = 0; c < cells; ++c) out.push_back({PriorRole::latent, t, c});
  };
  switch (order) {
    case 1:
      for (int t = 0; t < T; ++t) {
        out.push_back({PriorRole::graph, t, -1});
        push_frame(t);
      }
      break;
    case 2:
      for (int t = 0; t < T; ++t) {
        push_frame(t);
        out.push_back({PriorRole::graph, t, -1});
      }
      break;
    case 3:
      for (int t = 0; t < T; ++t) out.push_back({PriorRole::graph, t, -1});
      for (int t = 0; t < T; ++t) push_frame(t);
      break;
    default:
      throw std::invalid_argument("sequence_layout: order must be 1, 2, or 3");
  }
  return out;
}

template <class S>
struct PriorSequence {
  Tensor<S> embeddings;              // [L, model_dim]
  std::vector<PriorPosition> roles;  // length L
  std::vector<int> latent_targets;   // code index of every latent position, sequence order
  int order = 1;
};

template <class S>
struct PriorForward {
  Tensor<S> nll;        // mean over latent-cell targets
  Tensor<S> graph_mse;  // mean-square at graph positions
  Tensor<S> total;      // nll + weight * graph_mse
  Tensor<S> logits;     // [L, K]
};

template <class S>
struct PriorModel {
  PriorConfig cfg;
  Tensor<S> z0_embed;      // [1, model_dim] learned empty embedding
  Tensor<S> code_embed;    // [K, model_dim]
  Tensor<S> temporal_enc;  // [T * cells, model_dim], one row per (frame, cell)
  Linear<S> graph_proj;    // graph_dim -> model_dim
  std::vector<TransformerLayer<S>> stack;
  Linear<S> head;  // model_dim -> K

  PriorModel() = default;
  PriorModel(PriorConfig config, Rng& rng) : cfg(config) {
    cfg.validate();
    z0_embed = normal_param<S>({1, cfg.model_dim}, rng);
    code_embed = normal_param<S>({cfg.codebook_size, cfg.model_dim}, rng);
    temporal_enc = normal_param<S>({cfg.video_length * cfg.cells, cfg.model_dim}, rng);
    graph_proj = Linear<S>(cfg.graph_dim, cfg.model_dim, rng);
    TransformerLayerConfig lc;
    lc.dim = cfg.model_dim;
    lc.heads = cfg.heads;
    lc.causal = true;
    stack.reserve(static_cast<size_t>(cfg.layers));
    for (int i = 0; i < cfg.layers; ++i) stack.emplace_back(lc, rng);
    head = Linear<S>(cfg.model_dim, cfg.codebook_size, rng);
  }

  // latents: T frames of `cells` code indices each; graph_reps: [T, graph_dim].
  PriorSequence<S> build_sequence(const std::vector<std::vector<int>>& latents,
                                  const Tensor<S>& graph_reps) const {
    require_rank(graph_reps, 2, "build_sequence");
    if (graph_reps.extent(0) != cfg.video_length)
      throw std::invalid_argument("build_sequence: need one graph representation per frame");
    if (graph_reps.extent(1) != cfg.graph_dim)
      throw std::invalid_argument("build_sequence: graph representation width mismatch");
    if (static_cast<int>(latents.size()) != cfg.video_length)
      throw std::invalid_argument("build_sequence: latent frame count mismatch");
    for (const auto& frame : latents) {
      if (static_cast<int>(frame.size()) != cfg.cells)
        throw std::invalid_argument("build_sequence: latent cell count mismatch");
      for (int k : frame)
        if (k < 0 || k >= cfg.codebook_size)
          throw std::invalid_argument("build_sequence: code index out of range");
    }

    auto gp = graph_proj(graph_reps);  // [T, model_dim]
    auto frame_block = [&](int t) {
      return add(take_rows(code_embed, latents[static_cast<size_t>(t)]),
                 slice_rows(temporal_enc, t * cfg.cells, cfg.cells));
    };

    std::vector<Tensor<S>> rows;
    rows.push_back(z0_embed);
    switch (cfg.insertion_order) {
      case 1:
        for (int t = 0; t < cfg.video_length; ++t) {
          rows.push_back(slice_rows(gp, t, 1));
          rows.push_back(frame_block(t));
        }
        break;
      case 2:
        for (int t = 0; t < cfg.video_length; ++t) {
          rows.push_back(frame_block(t));
          rows.push_back(slice_rows(gp, t, 1));
        }
        break;
      default:
        rows.push_back(gp);
        for (int t = 0; t < cfg.video_length; ++t) rows.push_back(frame_block(t));
        break;
    }

    PriorSequence<S> seq;
    seq.embeddings = concat_rows(rows);
    seq.roles = sequence_layout(cfg.video_length, cfg.cells, cfg.insertion_order);
    seq.order = cfg.insertion_order;
    seq.latent_targets.reserve(static_cast<size_t>(cfg.video_length * cfg.cells));
    for (const auto& frame : latents)
      seq.latent_targets.insert(seq.latent_targets.end(), frame.begin(), frame.end());
    return seq;
  }

  // Causal transformer over any prefix of embeddings.
  Tensor<S> hidden_states(const Tensor<S>& embeddings) const {
    Tensor<S> h = embeddings;
    for (const auto& layer : stack) h = layer(h);
    return h;
  }

  Tensor<S> logits_from_embeddings(const Tensor<S>& embeddings) const {
    return head(hidden_states(embeddings));
  }

  PriorForward<S> forward(const PriorSequence<S>& seq) const {
    if (seq.embeddings.extent(0) != cfg.sequence_length() ||
        static_cast<int>(seq.roles.size()) != cfg.sequence_length())
      throw std::invalid_argument("prior forward: sequence length mismatch");
    if (static_cast<int>(seq.latent_targets.size()) != cfg.video_length * cfg.cells)
      throw std::invalid_argument("prior forward: target count mismatch");

    auto h = hidden_states(seq.embeddings);
    PriorForward<S> out;
    out.logits = head(h);

    // Logits at p predict the token at p+1; only latent tokens are targets.
    std::vector<int> predecessors, graph_positions;
    for (size_t p = 0; p < seq.roles.size(); ++p) {
      if (seq.roles[p].role == PriorRole::latent)
        predecessors.push_back(static_cast<int>(p) - 1);
      else if (seq.roles[p].role == PriorRole::graph)
        graph_positions.push_back(static_cast<int>(p));
    }
    out.nll = nll_from_logits(take_rows(out.logits, predecessors), seq.latent_targets);

    // Gradient reaches both sides: the transformer learns to reproduce the
    // conditioning and the projection stays free to move. The likelihood
    // term needs informative representations, which counterweights any pull
    // toward shrinking them.
    out.graph_mse = mse(take_rows(h, graph_positions),
                        take_rows(seq.embeddings, graph_positions));
    out.total = add(out.nll, scale(out.graph_mse, S(cfg.graph_mse_weight)));
    return out;
  }

  // Draws one code index from temperature-scaled logits via inverse CDF.
  static int sample_index(std::span<const S> logit_row, double temperature, Rng& rng) {
    std::vector<double> p(logit_row.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < p.size(); ++j) {
      p[j] = static_cast<double>(logit_row[j]) / temperature;
      mx = std::max(mx, p[j]);
    }
    double z = 0;
    for (auto& v : p) {
      v = std::exp(v - mx);
      z += v;
    }
    const double u = rng.uniform() * z;
    double acc = 0;
    for (size_t j = 0; j < p.size(); ++j) {
      acc += p[j];
      if (u < acc) return static_cast<int>(j);
    }
    return static_cast<int>(p.size()) - 1;
  }

  // Ancestral sampling. Frame 0 cells are the given indices; graph positions
  // are injected, never sampled. Returns all T frames of code indices.
  std::vector<std::vector<int>> sample_future(const std::vector<int>& start_cells,
                                              const Tensor<S>& graph_reps, double temperature,
                                              Rng& rng) const {
    if (!(temperature > 0)) throw std::invalid_argument("sample_future: temperature must be > 0");
    if (static_cast<int>(start_cells.size()) != cfg.cells)
      throw std::invalid_argument("sample_future: start frame cell count mismatch");
    for (int k : start_cells)
      if (k < 0 || k >= cfg.codebook_size)
        throw std::invalid_argument("sample_future: start index out of range");
    require_rank(graph_reps, 2, "sample_future");
    if (graph_reps.extent(0) != cfg.video_length || graph_reps.extent(1) != cfg.graph_dim)
      throw std::invalid_argument("sample_future: graph representation shape mismatch");

    NoGradGuard ng;
    auto gp = graph_proj(graph_reps);
    auto layout = sequence_layout(cfg.video_length, cfg.cells, cfg.insertion_order);

    std::vector<std::vector<int>> out(static_cast<size_t>(cfg.video_length),
                                      std::vector<int>(static_cast<size_t>(cfg.cells), 0));
    out[0] = start_cells;

    std::vector<Tensor<S>> rows;
    rows.reserve(layout.size());
    for (const auto& pos : layout) {
      switch (pos.role) {
        case PriorRole::empty:
          rows.push_back(z0_embed);
          break;
        case PriorRole::graph:
          rows.push_back(slice_rows(gp, pos.t, 1));
          break;
        case PriorRole::latent: {
          int k;
          if (pos.t == 0) {
            k = start_cells[static_cast<size_t>(pos.cell)];
          } else {
            auto logits = logits_from_embeddings(concat_rows(rows));
            const int pred = logits.extent(0) - 1;
            auto lv = logits.value();
            k = sample_index(lv.subspan(static_cast<size_t>(pred) * cfg.codebook_size,
                                        static_cast<size_t>(cfg.codebook_size)),
                             temperature, rng);
            out[static_cast<size_t>(pos.t)][static_cast<size_t>(pos.cell)] = k;
          }
          rows.push_back(add(take_rows(code_embed, {k}),
                             slice_rows(temporal_enc, pos.t * cfg.cells + pos.cell, 1)));
          break;
        }
      }
    }
    return out;
  }

  void collect(ParamMap<S>& map, const std::string& prefix) const {
    map.add(prefix + ".z0", z0_embed);
    map.add(prefix + ".codes", code_embed);
    map.add(prefix + ".temporal", temporal_enc);
    graph_proj.collect(map, prefix + ".graph_proj");
    for (size_t i = 0; i < stack.size(); ++i)
      stack[i].collect(map, prefix + ".layer" + std::to_string(i));
    head.collect(map, prefix + ".head");
  }
};

// Full synthesis from precomputed graph representations: VQ round-trip the
// start frame, sample the remaining latents, decode every frame.
template <class S>
std::vector<Tensor<S>> synthesize_from_reps(const Tensor<S>& start_frame,
                                            const Tensor<S>& graph_reps,
                                            const VqAutoencoder<S>& vq, const PriorModel<S>& prior,
                                            double temperature, Rng& rng,
                                            std::vector<std::vector<int>>* latents_out = nullptr) {
  if (vq.cfg.cells() != prior.cfg.cells)
    throw std::invalid_argument("synthesize: quantizer grid does not match the prior");
  if (vq.cfg.codebook_size != prior.cfg.codebook_size)
    throw std::invalid_argument("synthesize: codebook size does not match the prior");
  NoGradGuard ng;
  auto start_cells = vq.nearest_codes(vq.encode(start_frame));
  auto latents = prior.sample_future(start_cells, graph_reps, temperature, rng);
  std::vector<Tensor<S>> frames;
  frames.reserve(latents.size());
  for (const auto& frame : latents) frames.push_back(vq.decode_indices(frame));
  if (latents_out) *latents_out = std::move(latents);
  return frames;
}

// Convenience wrapper that runs the graph encoder on a sparse track first.
template <class S>
std::vector<Tensor<S>> synthesize_video(const Tensor<S>& start_frame, const GraphTrack& track,
                                        const Vocabulary& vocab, const VsgEncoder<S>& vsg,
                                        const VqAutoencoder<S>& vq, const PriorModel<S>& prior,
                                        double temperature, Rng& rng,
                                        std::vector<std::vector<int>>* latents_out = nullptr) {
  if (vsg.cfg.dim != prior.cfg.graph_dim)
    throw std::invalid_argument("synthesize: graph encoder width does not match the prior");
  if (vsg.cfg.video_length != prior.cfg.video_length)
    throw std::invalid_argument("synthesize: video length does not match the prior");
  NoGradGuard ng;
  auto enc = vsg.encode_track(track, vocab);
  return synthesize_from_reps(start_frame, enc.reps, vq, prior, temperature, rng, latents_out);
}

}  // namespace sgs
