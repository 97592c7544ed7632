#pragma once
// Graph encoder in two stages. The spatial stage runs full attention over a
// linearized graph (context token first) with structural encodings fed to
// queries and keys only, and reads the graph's single-vector context from
// position 0. The temporal stage builds a length-T sequence of learned mask
// embeddings, substitutes the given graph contexts at their frames, adds
// learned per-frame temporal encodings (again queries and keys only), and
// infers one representation per frame, given or not.
//
// Attention is full in both stages: a graph given late in the video is
// allowed to shape representations of earlier frames.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgs/errors.hpp"
#include "sgs/nn.hpp"
#include "sgs/rng.hpp"
#include "sgs/scenegraph.hpp"
#include "sgs/tensor.hpp"

namespace sgs {

struct VsgEncoderConfig {
  int dim = 32;
  int max_nodes = 5;
  int spatial_layers = 2;
  int temporal_layers = 2;
  int heads = 4;
  int video_length = 8;  // T, fixed per model

  void validate() const {
    if (dim < 1 || max_nodes < 1 || spatial_layers < 1 || temporal_layers < 1 || heads < 1 ||
        video_length < 1)
      throw std::invalid_argument("graph encoder: non-positive config value");
    if (dim % heads != 0)
      throw std::invalid_argument("graph encoder: dim must be a multiple of heads");
  }
};

template <class S>
struct SpatialOutput {
  Tensor<S> context;         // [d]
  Tensor<S> node_edge_reps;  // [N_n + N_e, d]; zero rows for an empty graph
};

template <class S>
struct VsgEncoder {
  VsgEncoderConfig cfg;
  int n_objects = 0;
  int n_predicates = 0;

  Tensor<S> object_embed;     // [n_objects, d], keyed by category
  Tensor<S> predicate_embed;  // [n_predicates, d]
  Tensor<S> context_embed;    // [1, d]
  Tensor<S> mask_embed;       // [1, d]
  StructuralEncodingTable<S> enc_table;
  Tensor<S> temporal_enc;  // [T, d]
  std::vector<TransformerLayer<S>> spatial;
  std::vector<TransformerLayer<S>> temporal;

  VsgEncoder() = default;
  VsgEncoder(VsgEncoderConfig config, int objects, int predicates, Rng& rng)
      : cfg(config), n_objects(objects), n_predicates(predicates) {
    cfg.validate();
    if (objects < 1 || predicates < 1)
      throw std::invalid_argument("graph encoder: empty vocabulary");
    object_embed = normal_param<S>({n_objects, cfg.dim}, rng);
    predicate_embed = normal_param<S>({n_predicates, cfg.dim}, rng);
    // Zero-init for the two shared injected tokens. A random shared vector
    // here dominates the residual stream at every readout position, so all
    // context (and masked-frame) outputs start nearly collinear and the
    // contrastive losses settle into a degenerate two-cluster arrangement.
    // Starting at zero leaves only the attention-mixed token content, which
    // differs per graph, and the embeddings train away from zero normally.
    context_embed = zeros_param<S>({1, cfg.dim});
    mask_embed = zeros_param<S>({1, cfg.dim});
    enc_table.context = normal_param<S>({cfg.dim}, rng);
    enc_table.node = normal_param<S>({cfg.max_nodes, cfg.dim}, rng);
    temporal_enc = normal_param<S>({cfg.video_length, cfg.dim}, rng);
    TransformerLayerConfig lc;
    lc.dim = cfg.dim;
    lc.heads = cfg.heads;
    for (int l = 0; l < cfg.spatial_layers; ++l) spatial.emplace_back(lc, rng);
    for (int l = 0; l < cfg.temporal_layers; ++l) temporal.emplace_back(lc, rng);
  }

  // Token embedding rows in sequence order: context embedding, object
  // embeddings by category, predicate embeddings by category.
  Tensor<S> token_embeddings(const TokenSequence& seq) const {
    std::vector<int> node_cats, edge_cats;
    for (const GraphToken& tok : seq.tokens) {
      if (tok.kind == TokenKind::Node) node_cats.push_back(tok.category);
      if (tok.kind == TokenKind::Edge) edge_cats.push_back(tok.category);
    }
    std::vector<Tensor<S>> parts;
    parts.push_back(context_embed);
    if (!node_cats.empty()) parts.push_back(take_rows(object_embed, node_cats));
    if (!edge_cats.empty()) parts.push_back(take_rows(predicate_embed, edge_cats));
    return concat_rows(parts);
  }

  SpatialOutput<S> encode_spatial(const TokenSequence& seq) const {
    Tensor<S> x = token_embeddings(seq);
    Tensor<S> enc = structural_encodings(seq, enc_table);
    for (const auto& layer : spatial) x = layer(x, &enc);
    SpatialOutput<S> out;
    out.context = reshape(slice_rows(x, 0, 1), {cfg.dim});
    out.node_edge_reps = slice_rows(x, 1, x.extent(0) - 1);
    return out;
  }

  // contexts: frame index -> [d] context vector. Mask embeddings stand in
  // for the other frames. Returns [T, d], one representation per frame.
  Tensor<S> encode_temporal(const std::map<int, Tensor<S>>& contexts, int T) const {
    if (contexts.empty())
      throw std::invalid_argument("encode_temporal: no graph contexts given");
    if (T != cfg.video_length)
      throw std::invalid_argument("encode_temporal: model is trained for T=" +
                                  std::to_string(cfg.video_length) + ", got " +
                                  std::to_string(T));
    for (const auto& [t, c] : contexts) {
      if (t < 0 || t >= T)
        throw std::invalid_argument("encode_temporal: context frame out of range");
      if (c.shape() != Shape{cfg.dim})
        throw std::invalid_argument("encode_temporal: context dim mismatch");
    }
    std::vector<Tensor<S>> rows;
    rows.reserve(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
      auto it = contexts.find(t);
      rows.push_back(it == contexts.end() ? mask_embed : reshape(it->second, {1, cfg.dim}));
    }
    Tensor<S> x = concat_rows(rows);
    for (const auto& layer : temporal) x = layer(x, &temporal_enc);
    return x;
  }

  struct TrackEncoding {
    Tensor<S> reps;  // [T, d]
    std::map<int, SpatialOutput<S>> spatial_outputs;  // only at given frames
  };

  TrackEncoding encode_track(const GraphTrack& track, const Vocabulary& vocab) const {
    auto violations = validate_track(track, vocab, cfg.max_nodes);
    if (!violations.empty()) {
      std::string msg = "encode_track: invalid track";
      for (const auto& v : violations) msg += "\n  " + v;
      throw UserError(msg);
    }
    if (static_cast<int>(vocab.objects.size()) != n_objects ||
        static_cast<int>(vocab.predicates.size()) != n_predicates)
      throw UserError("encode_track: vocabulary size does not match the model");
    TrackEncoding out;
    std::map<int, Tensor<S>> contexts;
    for (const auto& [t, graph] : track.entries) {
      auto seq = linearize(graph, vocab, cfg.max_nodes);
      auto sp = encode_spatial(seq);
      contexts.emplace(t, sp.context);
      out.spatial_outputs.emplace(t, std::move(sp));
    }
    out.reps = encode_temporal(contexts, track.length);
    return out;
  }

  void collect(ParamMap<S>& map, const std::string& prefix) const {
    map.add(prefix + ".objects", object_embed);
    map.add(prefix + ".predicates", predicate_embed);
    map.add(prefix + ".context", context_embed);
    map.add(prefix + ".mask", mask_embed);
    map.add(prefix + ".enc.context", enc_table.context);
    map.add(prefix + ".enc.node", enc_table.node);
    map.add(prefix + ".enc.temporal", temporal_enc);
    for (size_t l = 0; l < spatial.size(); ++l)
      spatial[l].collect(map, prefix + ".spatial" + std::to_string(l));
    for (size_t l = 0; l < temporal.size(); ++l)
      temporal[l].collect(map, prefix + ".temporal" + std::to_string(l));
  }
};

}  // namespace sgs
