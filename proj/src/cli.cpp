#include "sgs/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "sgs/config.hpp"
#include "sgs/errors.hpp"
#include "sgs/pipeline.hpp"
#include "sgs/tensor_io.hpp"

namespace sgs {

namespace {

namespace fs = std::filesystem;

RunConfig load_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  cfg.validate();
  return cfg;
}

// Stage wiring is a config decision, so stages whose configs describe
// different model structures are rejected up front instead of failing deep
// inside a model. Training-only settings (steps, lr, seeds) may differ.
nlohmann::json structural(const RunConfig& c, const std::string& kind) {
  if (kind == "vsg") {
    auto v = c.vsg_config();
    auto f = c.frame_config();
    return {v.dim,    v.max_nodes, v.spatial_layers, v.temporal_layers, v.heads,
            v.video_length, f.height, f.width,       f.patch,           f.backbone_dim,
            f.layers, f.heads};
  }
  if (kind == "vq") {
    auto q = c.vq_config();
    return {q.height, q.width, q.stride, q.codebook_size, q.code_dim, q.hidden};
  }
  auto p = c.prior_config();
  return {p.codebook_size, p.cells, p.video_length, p.graph_dim,
          p.model_dim,     p.layers, p.heads,       p.insertion_order};
}

void require_compatible(const RunConfig& a, const RunConfig& b, const std::string& kind,
                        const std::string& what) {
  if (structural(a, kind) != structural(b, kind))
    throw UserError("model structure '" + kind + "' differs between " + what);
}

void write_sidecar_config(const fs::path& artifact, const RunConfig& cfg) {
  write_file_atomic(artifact.string() + ".config.json", cfg.to_json().dump(2) + "\n");
}

void write_run_record(const fs::path& dir, const nlohmann::json& record) {
  write_file_atomic(dir / "run.json", record.dump(2) + "\n");
}

int run_gen_data(const std::string& config_path, const std::string& out, int episodes,
                 long long seed, int workers) {
  RunConfig cfg = load_or_default(config_path);
  if (episodes > 0) cfg.data.episodes = episodes;
  if (seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(seed);
  cfg.validate();
  generate_dataset(out, cfg, workers);
  std::cout << "episodes," << cfg.data.episodes << "\n";
  return 0;
}

int run_pretrain(const std::string& config_path, const std::string& data,
                 const std::string& out) {
  RunConfig cfg = load_or_default(config_path);
  Dataset ds = load_dataset(data);
  if (ds.synth.video_length != cfg.data.synth.video_length ||
      ds.synth.height != cfg.data.synth.height || ds.synth.width != cfg.data.synth.width)
    throw UserError("pretrain: dataset dimensions differ from the config's data section");
  auto bundle = pretrain_vsg(ds, cfg, &std::cout);
  save_vsg(out, bundle, cfg, ds.vocab);
  write_sidecar_config(out, cfg);
  return 0;
}

int run_train_vq(const std::string& config_path, const std::string& data,
                 const std::string& out) {
  RunConfig cfg = load_or_default(config_path);
  Dataset ds = load_dataset(data);
  if (ds.synth.height != cfg.data.synth.height || ds.synth.width != cfg.data.synth.width)
    throw UserError("train-vq: dataset dimensions differ from the config's data section");
  auto model = train_vq(ds, cfg, &std::cout);
  save_vq(out, model, cfg);
  write_sidecar_config(out, cfg);
  return 0;
}

int run_train_prior(const std::string& config_path, const std::string& data,
                    const std::string& vsg_path, const std::string& vq_path,
                    const std::string& out) {
  RunConfig cfg = load_or_default(config_path);
  Dataset ds = load_dataset(data);
  auto vsg = load_vsg(vsg_path);
  auto vq = load_vq(vq_path);
  require_compatible(cfg, vsg.cfg, "vsg", "the run config and the representation checkpoint");
  require_compatible(cfg, vq.cfg, "vq", "the run config and the quantizer checkpoint");
  auto model = train_prior(ds, vsg.bundle, vq.model, cfg, &std::cout);
  save_prior(out, model, cfg);
  write_sidecar_config(out, cfg);
  return 0;
}

int run_synthesize(const std::string& start_path, const std::string& track_path,
                   const std::string& vsg_path, const std::string& vq_path,
                   const std::string& prior_path, const std::string& out, long long seed,
                   double temperature, bool unconditional) {
  auto prior = load_prior(prior_path);
  auto vq = load_vq(vq_path);
  require_compatible(prior.cfg, vq.cfg, "vq", "the prior and quantizer checkpoints");
  const RunConfig& cfg = prior.cfg;
  const double temp = temperature > 0 ? temperature : cfg.prior.temperature;

  auto start = read_pgm(start_path);
  if (start.extent(0) != cfg.data.synth.height || start.extent(1) != cfg.data.synth.width)
    throw UserError("synthesize: start frame size does not match the model");

  Rng rng(static_cast<std::uint64_t>(seed));
  std::vector<std::vector<int>> latents;
  std::vector<Tensor<float>> frames;
  if (unconditional) {
    const int t_len = cfg.data.synth.video_length;
    auto zeros = Tensor<float>::from(
        {t_len, cfg.vsg.dim}, std::vector<float>(size_t(t_len) * cfg.vsg.dim));
    frames = synthesize_from_reps(start, zeros, vq.model, prior.model, temp, rng, &latents);
  } else {
    if (track_path.empty())
      throw UserError("synthesize: --track is required unless --unconditional is given");
    if (vsg_path.empty())
      throw UserError("synthesize: --vsg is required unless --unconditional is given");
    auto vsg = load_vsg(vsg_path);
    require_compatible(prior.cfg, vsg.cfg, "vsg",
                       "the prior and representation checkpoints");
    GraphTrack track;
    try {
      track = track_from_json(nlohmann::json::parse(read_file(track_path)), vsg.vocab,
                              cfg.vsg.max_nodes);
    } catch (const nlohmann::json::exception& ex) {
      throw UserError("synthesize: bad track file " + track_path + ": " + ex.what());
    }
    if (track.length != cfg.data.synth.video_length)
      throw UserError("synthesize: track length does not match the model's video length");
    frames = synthesize_video(start, track, vsg.vocab, vsg.bundle.graph, vq.model, prior.model,
                              temp, rng, &latents);
  }

  fs::create_directories(out);
  char name[32];
  for (size_t t = 0; t < frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame_%02d.pgm", int(t));
    write_pgm(fs::path(out) / name, frames[t]);
  }
  write_file_atomic(fs::path(out) / "latents.json", nlohmann::json(latents).dump() + "\n");
  write_file_atomic(fs::path(out) / "config.json", cfg.to_json().dump(2) + "\n");
  write_run_record(out, {{"command", "synthesize"},
                         {"seed", seed},
                         {"temperature", temp},
                         {"unconditional", unconditional}});
  std::cout << "frames," << frames.size() << "\n";
  return 0;
}

int run_evaluate(const std::string& data, const std::string& vsg_path,
                 const std::string& vq_path, const std::string& prior_path,
                 const std::string& out, int repeats, int batch, long long seed,
                 double temperature, bool unconditional) {
  auto vsg = load_vsg(vsg_path);
  auto vq = load_vq(vq_path);
  auto prior = load_prior(prior_path);
  require_compatible(prior.cfg, vq.cfg, "vq", "the prior and quantizer checkpoints");
  require_compatible(prior.cfg, vsg.cfg, "vsg", "the prior and representation checkpoints");

  RunConfig cfg = prior.cfg;
  if (repeats > 0) cfg.eval.repeats = repeats;
  if (batch > 0) cfg.eval.batch = batch;
  if (seed >= 0) cfg.eval.seed = static_cast<std::uint64_t>(seed);
  if (temperature > 0) cfg.prior.temperature = temperature;
  cfg.validate();

  Dataset ds = load_dataset(data);
  auto rows = evaluate_model(ds, vsg.bundle, vq.model, prior.model, cfg, unconditional);
  const std::string csv = metrics_csv(rows, cfg.hash());
  std::cout << csv;
  fs::create_directories(out);
  write_file_atomic(fs::path(out) / "metrics.csv", csv);
  write_file_atomic(fs::path(out) / "config.json", cfg.to_json().dump(2) + "\n");
  write_run_record(out, {{"command", "evaluate"},
                         {"seed", cfg.eval.seed},
                         {"unconditional", unconditional}});
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"scene-graph conditioned video synthesis pipeline"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string config_path, data_dir, out_path, vsg_path, vq_path, prior_path;
  std::string start_path, track_path;
  int episodes = 0, workers = 1, repeats = 0, batch = 0;
  long long seed = -1;
  double temperature = 0;
  bool unconditional = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic episode dataset");
  gen->add_option("--config", config_path, "Run config JSON (defaults when omitted)");
  gen->add_option("--out", out_path, "Output dataset directory")->required();
  gen->add_option("--episodes", episodes, "Override data.episodes");
  gen->add_option("--seed", seed, "Override data.seed");
  gen->add_option("--workers", workers, "Worker threads for episode generation");

  auto* pre = app.add_subcommand("pretrain-vsg", "Pretrain the graph and frame encoders");
  pre->add_option("--config", config_path, "Run config JSON");
  pre->add_option("--data", data_dir, "Dataset directory")->required();
  pre->add_option("--out", out_path, "Output checkpoint file")->required();

  auto* tvq = app.add_subcommand("train-vq", "Train the frame quantizer");
  tvq->add_option("--config", config_path, "Run config JSON");
  tvq->add_option("--data", data_dir, "Dataset directory")->required();
  tvq->add_option("--out", out_path, "Output checkpoint file")->required();

  auto* tpr = app.add_subcommand("train-prior", "Train the autoregressive latent prior");
  tpr->add_option("--config", config_path, "Run config JSON");
  tpr->add_option("--data", data_dir, "Dataset directory")->required();
  tpr->add_option("--vsg", vsg_path, "Representation checkpoint")->required();
  tpr->add_option("--vq", vq_path, "Quantizer checkpoint")->required();
  tpr->add_option("--out", out_path, "Output checkpoint file")->required();

  auto* syn = app.add_subcommand("synthesize", "Synthesize a video from a start frame");
  syn->add_option("--start", start_path, "Start frame PGM")->required();
  syn->add_option("--track", track_path, "Scene graph track JSON");
  syn->add_option("--vsg", vsg_path, "Representation checkpoint");
  syn->add_option("--vq", vq_path, "Quantizer checkpoint")->required();
  syn->add_option("--prior", prior_path, "Prior checkpoint")->required();
  syn->add_option("--out", out_path, "Output directory")->required();
  syn->add_option("--seed", seed, "Sampling seed")->required();
  syn->add_option("--temperature", temperature, "Sampling temperature (default: config)");
  syn->add_flag("--unconditional", unconditional, "Ignore graphs; condition on zeros");

  auto* ev = app.add_subcommand("evaluate", "Evaluate synthesis against a dataset");
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--vsg", vsg_path, "Representation checkpoint")->required();
  ev->add_option("--vq", vq_path, "Quantizer checkpoint")->required();
  ev->add_option("--prior", prior_path, "Prior checkpoint")->required();
  ev->add_option("--out", out_path, "Output directory")->required();
  ev->add_option("--repeats", repeats, "Override eval.repeats");
  ev->add_option("--batch", batch, "Override eval.batch");
  ev->add_option("--seed", seed, "Override eval.seed");
  ev->add_option("--temperature", temperature, "Override prior.temperature");
  ev->add_option("--workers", workers, "Accepted for interface parity; evaluation is sequential");
  ev->add_flag("--unconditional", unconditional, "Evaluate unconditional synthesis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return run_gen_data(config_path, out_path, episodes, seed, workers);
    if (*pre) return run_pretrain(config_path, data_dir, out_path);
    if (*tvq) return run_train_vq(config_path, data_dir, out_path);
    if (*tpr) return run_train_prior(config_path, data_dir, vsg_path, vq_path, out_path);
    if (*syn)
      return run_synthesize(start_path, track_path, vsg_path, vq_path, prior_path, out_path,
                            seed, temperature, unconditional);
    if (*ev)
      return run_evaluate(data_dir, vsg_path, vq_path, prior_path, out_path, repeats, batch,
                          seed, temperature, unconditional);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\nrun '" << (argv ? argv[0] : "sgsynth")
              << " --help' for usage\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sgs
