#pragma once
// Pipeline stages wired through files: dataset generation, the three training
// stages, synthesis, and evaluation. Stages exchange artifacts only via
// directories and single-file checkpoints so each is independently runnable
// and resumable. Checkpoint writes are atomic.

#include <filesystem>
#include <ostream>
#include <vector>

#include "json.hpp"
#include "sgs/config.hpp"
#include "sgs/evaluation.hpp"
#include "sgs/frame_encoder.hpp"
#include "sgs/prior.hpp"
#include "sgs/synthdata.hpp"
#include "sgs/vq.hpp"
#include "sgs/vsg_encoder.hpp"

namespace sgs {

// ---- dataset ----

struct Dataset {
  std::vector<Episode> episodes;
  Vocabulary vocab;
  SynthConfig synth;
};

// Writes cfg.data.episodes episode directories plus dataset.json and the
// resolved config. Re-running with the same config is byte-identical.
void generate_dataset(const std::filesystem::path& dir, const RunConfig& cfg, int workers = 1);
Dataset load_dataset(const std::filesystem::path& dir);

// ---- checkpoints ----
// Single file: magic, manifest JSON (kind, resolved config, extras), then
// named parameter tensors. Written atomically.

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const ParamMap<float>& params);

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into an existing model's parameters; names and
// shapes must match exactly in both directions.
void restore_params(const Checkpoint& ckpt, ParamMap<float>& params);

// ---- stage 1: representation pretraining ----

struct VsgBundle {
  VsgEncoder<float> graph;
  FrameEncoder<float> frame;
};

VsgBundle make_vsg_bundle(const RunConfig& cfg, const Vocabulary& vocab, Rng& rng);

// Trains with the enabled loss subset; CSV rows (step,intra,inter,finegrain,
// total) go to `log` when non-null. With every component disabled the bundle
// stays at its seeded initialization.
VsgBundle pretrain_vsg(const Dataset& ds, const RunConfig& cfg, std::ostream* log);

void save_vsg(const std::filesystem::path& path, const VsgBundle& bundle, const RunConfig& cfg,
              const Vocabulary& vocab);
struct LoadedVsg {
  VsgBundle bundle;
  RunConfig cfg;
  Vocabulary vocab;
};
LoadedVsg load_vsg(const std::filesystem::path& path);

// ---- stage 2: frame quantizer ----

VqAutoencoder<float> train_vq(const Dataset& ds, const RunConfig& cfg, std::ostream* log);

void save_vq(const std::filesystem::path& path, const VqAutoencoder<float>& model,
             const RunConfig& cfg);
struct LoadedVq {
  VqAutoencoder<float> model;
  RunConfig cfg;
};
LoadedVq load_vq(const std::filesystem::path& path);

// ---- stage 3: autoregressive prior ----

PriorModel<float> train_prior(const Dataset& ds, const VsgBundle& bundle,
                              const VqAutoencoder<float>& vq, const RunConfig& cfg,
                              std::ostream* log);

void save_prior(const std::filesystem::path& path, const PriorModel<float>& model,
                const RunConfig& cfg);
struct LoadedPrior {
  PriorModel<float> model;
  RunConfig cfg;
};
LoadedPrior load_prior(const std::filesystem::path& path);

// ---- evaluation ----

// Synthesizes cfg.eval.batch videos per repeat (conditioned on each sampled
// episode's track, or on zeroed representations when unconditional) and
// reports ssim, fvd, retrieval, and the semantic oracle pass rate.
std::vector<MetricSummary> evaluate_model(const Dataset& ds, const VsgBundle& bundle,
                                          const VqAutoencoder<float>& vq,
                                          const PriorModel<float>& prior, const RunConfig& cfg,
                                          bool unconditional = false);

}  // namespace sgs
