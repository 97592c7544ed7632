#pragma once
// Run configuration: one JSON document with sections data/vsg/vq/prior/eval
// covering every tunable in the pipeline. Missing keys take defaults, unknown
// keys are rejected (recursively), and every command writes the resolved
// document next to its outputs so a run is reproducible from the artifact
// directory alone.

#include <cstdint>
#include <string>

#include "json.hpp"
#include "sgs/frame_encoder.hpp"
#include "sgs/prior.hpp"
#include "sgs/synthdata.hpp"
#include "sgs/vq.hpp"
#include "sgs/vsg_encoder.hpp"

namespace sgs {

struct DataSection {
  SynthConfig synth;
  int episodes = 64;
  std::uint64_t seed = 1;
};

struct VsgSection {
  int dim = 32;  // shared by the graph encoder and the frame encoder output
  int max_nodes = 5;
  int spatial_layers = 2;
  int temporal_layers = 2;
  int heads = 4;
  int frame_patch = 4;
  int frame_backbone_dim = 32;
  int frame_layers = 1;
  int frame_heads = 4;
  bool use_intra = true;
  bool use_inter = true;
  bool use_finegrain = true;
  int steps = 200;
  int batch = 8;
  double lr = 1e-4;
  // Learning-rate multiplier for the frame backbone (patch embedder plus
  // mixing layers); the pointwise reduction and the pooling projection always
  // train at the full rate. With the backbone training at the full rate the
  // bounded cosine logits collapse both embedding spaces onto a single axis
  // (two antipodal clusters, retrieval stuck near chance); a slow backbone
  // anchors a near-stationary full-rank visual feature space that the graph
  // side organizes against. 0 freezes the backbone at its seeded init.
  double frame_backbone_lr_scale = 0.0;
  std::uint64_t seed = 11;
};

struct VqSection {
  int stride = 4;
  int codebook_size = 64;
  int code_dim = 32;
  int hidden = 64;
  double beta = 0.25;
  int steps = 400;
  int batch = 8;
  double lr = 2e-4;
  std::uint64_t seed = 12;
  int revive_every = 50;  // dead-code revival cadence in steps; 0 disables
};

struct PriorSection {
  int model_dim = 128;
  int layers = 4;
  int heads = 4;
  int insertion_order = 1;
  double graph_mse_weight = 1.0;
  double temperature = 1.0;
  int steps = 400;
  int batch = 4;
  double lr = 1e-5;
  std::uint64_t seed = 13;
};

struct EvalSection {
  int repeats = 5;
  int batch = 8;  // videos sampled per repeat
  std::uint64_t seed = 14;
};

struct RunConfig {
  DataSection data;
  VsgSection vsg;
  VqSection vq;
  PriorSection prior;
  EvalSection eval;

  // Parses a document; missing keys keep defaults, unknown keys throw
  // UserError naming the offender.
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::string& path);

  // Fully resolved document (every key present).
  nlohmann::json to_json() const;

  // FNV-1a 64 over the canonical resolved document, as 16 hex digits.
  std::string hash() const;

  // Module configs derived from the sections; each validates itself.
  VsgEncoderConfig vsg_config() const;
  FrameEncoderConfig frame_config() const;
  VqConfig vq_config() const;
  PriorConfig prior_config() const;

  // Cross-section consistency plus per-module validation.
  void validate() const;
};

}  // namespace sgs
