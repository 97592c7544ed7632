#include "sgs/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <thread>

#include "sgs/errors.hpp"
#include "sgs/losses.hpp"
#include "sgs/tensor_io.hpp"

namespace sgs {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'S', 'G', 'C'};

std::string episode_dir_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "ep_%04d", index);
  return buf;
}

// First k entries of a seeded partial Fisher-Yates over 0..n-1.
std::vector<int> sample_without_replacement(Rng& rng, int n, int k) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
  idx.resize(k);
  return idx;
}

void require_finite(double v, const char* stage, int step) {
  if (std::isfinite(v)) return;
  throw std::runtime_error(std::string(stage) + ": non-finite loss at step " +
                           std::to_string(step) + ", aborting");
}

void log_row(std::ostream* log, int step, std::initializer_list<double> cols) {
  if (!log) return;
  char buf[64];
  *log << step;
  for (double v : cols) {
    std::snprintf(buf, sizeof(buf), ",%.6g", v);
    *log << buf;
  }
  *log << '\n';
}

Tensor<float> zero_scalar() { return Tensor<float>::from({}, std::vector<float>{0.0f}); }

}  // namespace

// ---- dataset ----

void generate_dataset(const std::filesystem::path& dir, const RunConfig& cfg, int workers) {
  cfg.validate();
  if (workers < 1) throw UserError("gen-data: workers must be positive");
  std::filesystem::create_directories(dir);
  Rng root(cfg.data.seed);
  const int n = cfg.data.episodes;
  std::vector<std::uint64_t> seeds(n);
  for (int i = 0; i < n; ++i) seeds[i] = root.derive("episode", i).seed();

  auto worker = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      Episode ep = generate_episode(cfg.data.synth, seeds[i]);
      save_episode(dir / episode_dir_name(i), ep, cfg.data.synth);
    }
  };
  if (workers == 1 || n < 2) {
    worker(0, n);
  } else {
    const int pool = std::min(workers, n);
    std::vector<std::thread> threads;
    const int chunk = (n + pool - 1) / pool;
    for (int w = 0; w < pool; ++w)
      threads.emplace_back(worker, std::min(w * chunk, n), std::min((w + 1) * chunk, n));
    for (auto& t : threads) t.join();
  }

  nlohmann::json manifest = {{"episodes", n},
                             {"config_hash", cfg.hash()},
                             {"seed", cfg.data.seed},
                             {"vocabulary", vocabulary_to_json(synth_vocabulary())}};
  write_file_atomic(dir / "dataset.json", manifest.dump(2) + "\n");
  write_file_atomic(dir / "config.json", cfg.to_json().dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "dataset.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw UserError("dataset: bad manifest in " + dir.string() + ": " + ex.what());
  }
  Dataset ds;
  ds.vocab = synth_vocabulary();
  try {
    const int n = manifest.at("episodes").get<int>();
    auto vocab = vocabulary_from_json(manifest.at("vocabulary"));
    if (vocab.hash() != ds.vocab.hash())
      throw UserError("dataset: vocabulary does not match this build");
    ds.episodes.reserve(n);
    for (int i = 0; i < n; ++i) ds.episodes.push_back(load_episode(dir / episode_dir_name(i)));
  } catch (const nlohmann::json::exception& ex) {
    throw UserError("dataset: bad manifest in " + dir.string() + ": " + ex.what());
  }
  if (ds.episodes.empty()) throw UserError("dataset: no episodes in " + dir.string());
  const auto cfg = RunConfig::load((dir / "config.json").string());
  ds.synth = cfg.data.synth;
  return ds;
}

// ---- checkpoints ----

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& manifest,
                     const ParamMap<float>& params) {
  std::string out(kCheckpointMagic, 4);
  const std::string mbytes = manifest.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(mbytes.size()));
  out += mbytes;
  detail::put_u32(out, static_cast<std::uint32_t>(params.items.size()));
  for (const auto& [name, t] : params.items) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const std::string blob = encode_tensor_file(t.shape(), t.value());
    detail::put_u32(out, static_cast<std::uint32_t>(blob.size()));
    out += blob;
  }
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  auto need = [&](std::size_t at, std::size_t count) {
    if (at + count > bytes.size())
      throw std::runtime_error("checkpoint " + path.string() + ": truncated");
  };
  need(0, 8);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  std::size_t at = 4;
  const std::uint32_t mlen = detail::get_u32(p + at);
  at += 4;
  need(at, mlen);
  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(bytes.substr(at, mlen));
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad manifest: " + ex.what());
  }
  at += mlen;
  need(at, 4);
  const std::uint32_t count = detail::get_u32(p + at);
  at += 4;
  for (std::uint32_t i = 0; i < count; ++i) {
    need(at, 4);
    const std::uint32_t nlen = detail::get_u32(p + at);
    at += 4;
    need(at, nlen);
    std::string name = bytes.substr(at, nlen);
    at += nlen;
    need(at, 4);
    const std::uint32_t blen = detail::get_u32(p + at);
    at += 4;
    need(at, blen);
    auto loaded = decode_tensor_file(bytes.substr(at, blen), path.string() + ":" + name);
    at += blen;
    ckpt.tensors.emplace_back(std::move(name),
                              Tensor<float>::from(loaded.shape, loaded.data));
  }
  if (at != bytes.size())
    throw std::runtime_error("checkpoint " + path.string() + ": trailing bytes");
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, ParamMap<float>& params) {
  if (ckpt.tensors.size() != params.items.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (const auto& [name, stored] : ckpt.tensors) {
    Tensor<float>* target = params.find(name);
    if (!target) throw std::runtime_error("checkpoint: unexpected parameter " + name);
    if (stored.shape() != target->shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    auto dst = target->mutable_value();
    auto src = stored.value();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// ---- stage 1 ----

VsgBundle make_vsg_bundle(const RunConfig& cfg, const Vocabulary& vocab, Rng& rng) {
  VsgBundle b;
  b.graph = VsgEncoder<float>(cfg.vsg_config(), static_cast<int>(vocab.objects.size()),
                              static_cast<int>(vocab.predicates.size()), rng);
  b.frame = FrameEncoder<float>(cfg.frame_config(), rng);
  return b;
}

namespace {

ParamMap<float> bundle_params(const VsgBundle& b) {
  ParamMap<float> pm;
  b.graph.collect(pm, "vsg");
  b.frame.collect(pm, "enc");
  return pm;
}

}  // namespace

VsgBundle pretrain_vsg(const Dataset& ds, const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  Rng rng(cfg.vsg.seed);
  VsgBundle bundle = make_vsg_bundle(cfg, ds.vocab, rng);
  const bool any = cfg.vsg.use_intra || cfg.vsg.use_inter || cfg.vsg.use_finegrain;
  if (!any || cfg.vsg.steps == 0) return bundle;

  const int n = static_cast<int>(ds.episodes.size());
  const int batch = cfg.vsg.batch;
  if (batch > n) throw UserError("pretrain: batch larger than the dataset");
  const int t_len = ds.synth.video_length;
  const int dim = cfg.vsg.dim;

  // The frame backbone (patch embedder plus mixing layers) steps at a scaled
  // rate; the pointwise reduction, the pooling projection, and the whole
  // graph side train at the full rate. With the backbone fully trainable the
  // bounded cosine logits drive both embedding spaces onto one axis (two
  // antipodal clusters); a slow backbone keeps the visual features a
  // near-stationary full-rank target that the graph side organizes against.
  ParamMap<float> backbone_pm, main_pm;
  for (auto& [name, t] : bundle_params(bundle).items) {
    const bool backbone =
        name.rfind("enc.patch", 0) == 0 || name.rfind("enc.layer", 0) == 0;
    (backbone ? backbone_pm : main_pm).add(name, t);
  }
  Adam<float> opt(std::move(main_pm), cfg.vsg.lr);
  const bool train_backbone =
      cfg.vsg.frame_backbone_lr_scale > 0 && backbone_pm.count() > 0;
  std::optional<Adam<float>> backbone_opt;
  if (train_backbone)
    backbone_opt.emplace(backbone_pm, cfg.vsg.lr * cfg.vsg.frame_backbone_lr_scale);
  if (log) *log << "step,intra,inter,finegrain,total\n";

  for (int step = 1; step <= cfg.vsg.steps; ++step) {
    auto picks = sample_without_replacement(rng, n, batch);
    Tensor<float> intra_acc = zero_scalar();
    std::vector<Tensor<float>> g_rows, f_rows;
    std::vector<GraphFramePair<float>> pairs;
    for (int idx : picks) {
      const Episode& ep = ds.episodes[idx];
      auto enc = bundle.graph.encode_track(ep.track, ds.vocab);
      std::vector<Tensor<float>> fvecs;
      fvecs.reserve(t_len);
      std::map<int, Tensor<float>> fmaps;
      for (int t = 0; t < t_len; ++t) {
        auto feats = bundle.frame(ep.video[t]);
        fvecs.push_back(reshape(feats.frame_vector, {1, dim}));
        if (ep.track.entries.count(t)) fmaps.emplace(t, feats.feature_map);
      }
      auto frames = concat_rows(fvecs);  // [T, d]
      intra_acc = add(intra_acc, intra_loss(enc.reps, frames));
      for (const auto& [t, sp] : enc.spatial_outputs)
        pairs.push_back({sp.node_edge_reps, fmaps.at(t)});
      g_rows.push_back(enc.reps);
      f_rows.push_back(frames);
    }
    auto g3 = reshape(concat_rows(g_rows), {batch, t_len, dim});
    auto f3 = reshape(concat_rows(f_rows), {batch, t_len, dim});

    auto intra = cfg.vsg.use_intra ? scale(intra_acc, 1.0f / float(batch)) : zero_scalar();
    auto inter = cfg.vsg.use_inter ? inter_loss(g3, f3) : zero_scalar();
    auto fine = cfg.vsg.use_finegrain ? finegrain_loss(pairs) : zero_scalar();
    auto total = total_loss(intra, inter, fine);
    require_finite(total.item(), "pretrain", step);
    backward(total);
    opt.step();
    if (backbone_opt)
      backbone_opt->step();
    else
      zero_grads(backbone_pm);  // frozen backbone still accumulates grads
    log_row(log, step, {intra.item(), inter.item(), fine.item(), total.item()});
  }
  return bundle;
}

void save_vsg(const std::filesystem::path& path, const VsgBundle& bundle, const RunConfig& cfg,
              const Vocabulary& vocab) {
  nlohmann::json manifest = {{"kind", "vsg"},
                             {"config", cfg.to_json()},
                             {"config_hash", cfg.hash()},
                             {"vocabulary", vocabulary_to_json(vocab)}};
  save_checkpoint(path, manifest, bundle_params(bundle));
}

LoadedVsg load_vsg(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("kind", "") != "vsg")
    throw std::runtime_error("checkpoint " + path.string() + ": not a representation bundle");
  LoadedVsg out;
  try {
    out.cfg = RunConfig::from_json(ckpt.manifest.at("config"));
    out.vocab = vocabulary_from_json(ckpt.manifest.at("vocabulary"));
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad manifest: " + ex.what());
  }
  Rng rng(0);
  out.bundle = make_vsg_bundle(out.cfg, out.vocab, rng);
  auto pm = bundle_params(out.bundle);
  restore_params(ckpt, pm);
  return out;
}

// ---- stage 2 ----

namespace {

ParamMap<float> vq_params(const VqAutoencoder<float>& m) {
  ParamMap<float> pm;
  m.collect(pm, "vq");
  return pm;
}

}  // namespace

VqAutoencoder<float> train_vq(const Dataset& ds, const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  Rng rng(cfg.vq.seed);
  VqAutoencoder<float> model(cfg.vq_config(), rng);

  std::vector<const Tensor<float>*> frames;
  for (const auto& ep : ds.episodes)
    for (const auto& f : ep.video) frames.push_back(&f);
  const int n = static_cast<int>(frames.size());

  {
    // Data-dependent codebook start: latent grids of a seeded frame sample.
    NoGradGuard ng;
    std::vector<Tensor<float>> grids;
    const int samples = std::min(16, n);
    for (int i = 0; i < samples; ++i) grids.push_back(model.encode(*frames[rng.uniform_int(n)]));
    model.init_codebook_from(grids, rng);
  }

  Adam<float> opt(vq_params(model), cfg.vq.lr);
  if (log) *log << "step,recon,codebook,commitment,total\n";
  std::vector<int> usage_window;

  for (int step = 1; step <= cfg.vq.steps; ++step) {
    Tensor<float> total_acc = zero_scalar();
    double recon = 0, cb = 0, commit = 0;
    std::vector<const Tensor<float>*> batch_frames;
    for (int b = 0; b < cfg.vq.batch; ++b) batch_frames.push_back(frames[rng.uniform_int(n)]);
    for (const auto* f : batch_frames) {
      auto sl = model.training_loss(*f);
      total_acc = add(total_acc, sl.total);
      recon += sl.recon.item();
      cb += sl.codebook_term.item();
      commit += sl.commitment.item();
      usage_window.insert(usage_window.end(), sl.indices.begin(), sl.indices.end());
    }
    auto total = scale(total_acc, 1.0f / float(cfg.vq.batch));
    require_finite(total.item(), "train-vq", step);
    backward(total);
    opt.step();
    log_row(log, step,
            {recon / cfg.vq.batch, cb / cfg.vq.batch, commit / cfg.vq.batch, total.item()});

    if (cfg.vq.revive_every > 0 && step % cfg.vq.revive_every == 0) {
      NoGradGuard ng;
      std::vector<Tensor<float>> grids;
      grids.reserve(batch_frames.size());
      for (const auto* f : batch_frames) grids.push_back(model.encode(*f));
      model.revive_dead_codes(usage_window, concat_rows(grids), rng);
      usage_window.clear();
    }
  }
  return model;
}

void save_vq(const std::filesystem::path& path, const VqAutoencoder<float>& model,
             const RunConfig& cfg) {
  nlohmann::json manifest = {
      {"kind", "vq"}, {"config", cfg.to_json()}, {"config_hash", cfg.hash()}};
  save_checkpoint(path, manifest, vq_params(model));
}

LoadedVq load_vq(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("kind", "") != "vq")
    throw std::runtime_error("checkpoint " + path.string() + ": not a quantizer");
  LoadedVq out;
  try {
    out.cfg = RunConfig::from_json(ckpt.manifest.at("config"));
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad manifest: " + ex.what());
  }
  Rng rng(0);
  out.model = VqAutoencoder<float>(out.cfg.vq_config(), rng);
  auto pm = vq_params(out.model);
  restore_params(ckpt, pm);
  return out;
}

// ---- stage 3 ----

namespace {

ParamMap<float> prior_params(const PriorModel<float>& m) {
  ParamMap<float> pm;
  m.collect(pm, "prior");
  return pm;
}

}  // namespace

PriorModel<float> train_prior(const Dataset& ds, const VsgBundle& bundle,
                              const VqAutoencoder<float>& vq, const RunConfig& cfg,
                              std::ostream* log) {
  cfg.validate();
  Rng rng(cfg.prior.seed);
  PriorModel<float> model(cfg.prior_config(), rng);

  // The quantizer and both encoders are frozen here, so their outputs are
  // computed once up front as constants.
  const int n = static_cast<int>(ds.episodes.size());
  std::vector<std::vector<std::vector<int>>> latents(n);
  std::vector<Tensor<float>> reps(n);
  {
    NoGradGuard ng;
    for (int e = 0; e < n; ++e) {
      for (const auto& frame : ds.episodes[e].video)
        latents[e].push_back(vq.nearest_codes(vq.encode(frame)));
      reps[e] = bundle.graph.encode_track(ds.episodes[e].track, ds.vocab).reps;
    }
  }

  Adam<float> opt(prior_params(model), cfg.prior.lr);
  if (log) *log << "step,nll,graph_mse,total\n";
  for (int step = 1; step <= cfg.prior.steps; ++step) {
    Tensor<float> total_acc = zero_scalar();
    double nll = 0, gmse = 0;
    for (int b = 0; b < cfg.prior.batch; ++b) {
      const int e = rng.uniform_int(n);
      auto fwd = model.forward(model.build_sequence(latents[e], reps[e]));
      total_acc = add(total_acc, fwd.total);
      nll += fwd.nll.item();
      gmse += fwd.graph_mse.item();
    }
    auto total = scale(total_acc, 1.0f / float(cfg.prior.batch));
    require_finite(total.item(), "train-prior", step);
    backward(total);
    opt.step();
    log_row(log, step, {nll / cfg.prior.batch, gmse / cfg.prior.batch, total.item()});
  }
  return model;
}

void save_prior(const std::filesystem::path& path, const PriorModel<float>& model,
                const RunConfig& cfg) {
  nlohmann::json manifest = {
      {"kind", "prior"}, {"config", cfg.to_json()}, {"config_hash", cfg.hash()}};
  save_checkpoint(path, manifest, prior_params(model));
}

LoadedPrior load_prior(const std::filesystem::path& path) {
  auto ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("kind", "") != "prior")
    throw std::runtime_error("checkpoint " + path.string() + ": not a prior");
  LoadedPrior out;
  try {
    out.cfg = RunConfig::from_json(ckpt.manifest.at("config"));
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad manifest: " + ex.what());
  }
  Rng rng(0);
  out.model = PriorModel<float>(out.cfg.prior_config(), rng);
  auto pm = prior_params(out.model);
  restore_params(ckpt, pm);
  return out;
}

// ---- evaluation ----

std::vector<MetricSummary> evaluate_model(const Dataset& ds, const VsgBundle& bundle,
                                          const VqAutoencoder<float>& vq,
                                          const PriorModel<float>& prior, const RunConfig& cfg,
                                          bool unconditional) {
  cfg.validate();
  const int n = static_cast<int>(ds.episodes.size());
  const int batch = cfg.eval.batch;
  if (batch > n) throw UserError("evaluate: eval.batch larger than the dataset");
  const int t_len = ds.synth.video_length;
  const int dim = bundle.graph.cfg.dim;

  NoGradGuard ng;
  Rng root(cfg.eval.seed);
  std::vector<double> ssim_vals, fvd_vals, retr_vals, oracle_vals;
  for (int r = 0; r < cfg.eval.repeats; ++r) {
    Rng rep = root.derive("repeat", r);
    auto picks = sample_without_replacement(rep, n, batch);

    std::vector<std::vector<Tensor<float>>> real, fake;
    double ssim_acc = 0;
    int oracle_pass = 0, oracle_total = 0;
    std::vector<float> g_rows, f_rows;
    for (int idx : picks) {
      const Episode& ep = ds.episodes[idx];
      Rng srng = rep.derive("episode", idx);
      std::vector<Tensor<float>> frames;
      if (unconditional) {
        auto zeros = Tensor<float>::from({t_len, dim}, std::vector<float>(size_t(t_len) * dim));
        frames = synthesize_from_reps(ep.video[0], zeros, vq, prior, cfg.prior.temperature, srng);
      } else {
        frames = synthesize_video(ep.video[0], ep.track, ds.vocab, bundle.graph, vq, prior,
                                  cfg.prior.temperature, srng);
      }
      double s = 0;
      for (int t = 0; t < t_len; ++t) s += ssim(frames[t], ep.video[t]);
      ssim_acc += s / t_len;
      for (const auto& [t, g] : ep.track.entries) {
        ++oracle_total;
        if (semantic_oracle_pixels(frames, g, t, ds.synth).pass) ++oracle_pass;
      }

      // Video-level embeddings for retrieval: mean graph representation
      // against mean frame vector of the real video.
      auto reps = bundle.graph.encode_track(ep.track, ds.vocab).reps;
      auto rv = reps.value();
      std::vector<double> gmean(dim, 0.0), fmean(dim, 0.0);
      for (int t = 0; t < t_len; ++t)
        for (int k = 0; k < dim; ++k) gmean[k] += rv[t * dim + k];
      for (int t = 0; t < t_len; ++t) {
        auto feats = bundle.frame(ep.video[t]);
        auto fv = feats.frame_vector.value();
        for (int k = 0; k < dim; ++k) fmean[k] += fv[k];
      }
      for (int k = 0; k < dim; ++k) {
        g_rows.push_back(float(gmean[k] / t_len));
        f_rows.push_back(float(fmean[k] / t_len));
      }

      real.push_back(ep.video);
      fake.push_back(std::move(frames));
    }

    ssim_vals.push_back(ssim_acc / batch);
    fvd_vals.push_back(fvd_proxy(video_feature_matrix(bundle.frame, real),
                                 video_feature_matrix(bundle.frame, fake)));
    retr_vals.push_back(retrieval_accuracy(Tensor<float>::from({batch, dim}, g_rows),
                                           Tensor<float>::from({batch, dim}, f_rows)));
    oracle_vals.push_back(oracle_total ? double(oracle_pass) / oracle_total : 0.0);
  }
  return {summarize("ssim", ssim_vals), summarize("fvd", fvd_vals),
          summarize("retrieval", retr_vals), summarize("oracle", oracle_vals)};
}

}  // namespace sgs
