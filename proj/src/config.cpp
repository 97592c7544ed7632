#include "sgs/config.hpp"

#include <cstdio>
#include <fstream>

#include "sgs/errors.hpp"

namespace sgs {

namespace {

// Pulls one typed key out of a working copy of a section; whatever is left
// at the end is unknown and rejected.
template <class T>
void take(nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UserError("config: bad value type for " + where + "." + key);
  }
  obj.erase(it);
}

void expect_empty(const nlohmann::json& obj, const std::string& where) {
  if (obj.empty()) return;
  throw UserError("config: unknown key " + where + "." + obj.begin().key());
}

nlohmann::json section(nlohmann::json& doc, const char* name) {
  auto it = doc.find(name);
  if (it == doc.end()) return nlohmann::json::object();
  if (!it->is_object()) throw UserError(std::string("config: section ") + name + " must be an object");
  nlohmann::json out = *it;
  doc.erase(it);
  return out;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw UserError("config: top level must be an object");
  nlohmann::json work = doc;
  RunConfig c;

  auto d = section(work, "data");
  take(d, "episodes", c.data.episodes, "data");
  take(d, "seed", c.data.seed, "data");
  take(d, "video_length", c.data.synth.video_length, "data");
  take(d, "height", c.data.synth.height, "data");
  take(d, "width", c.data.synth.width, "data");
  take(d, "min_objects", c.data.synth.min_objects, "data");
  take(d, "max_objects", c.data.synth.max_objects, "data");
  take(d, "min_given_graphs", c.data.synth.min_given_graphs, "data");
  expect_empty(d, "data");

  auto v = section(work, "vsg");
  take(v, "dim", c.vsg.dim, "vsg");
  take(v, "max_nodes", c.vsg.max_nodes, "vsg");
  take(v, "spatial_layers", c.vsg.spatial_layers, "vsg");
  take(v, "temporal_layers", c.vsg.temporal_layers, "vsg");
  take(v, "heads", c.vsg.heads, "vsg");
  take(v, "frame_patch", c.vsg.frame_patch, "vsg");
  take(v, "frame_backbone_dim", c.vsg.frame_backbone_dim, "vsg");
  take(v, "frame_layers", c.vsg.frame_layers, "vsg");
  take(v, "frame_heads", c.vsg.frame_heads, "vsg");
  take(v, "use_intra", c.vsg.use_intra, "vsg");
  take(v, "use_inter", c.vsg.use_inter, "vsg");
  take(v, "use_finegrain", c.vsg.use_finegrain, "vsg");
  take(v, "steps", c.vsg.steps, "vsg");
  take(v, "batch", c.vsg.batch, "vsg");
  take(v, "lr", c.vsg.lr, "vsg");
  take(v, "frame_backbone_lr_scale", c.vsg.frame_backbone_lr_scale, "vsg");
  take(v, "seed", c.vsg.seed, "vsg");
  expect_empty(v, "vsg");

  auto q = section(work, "vq");
  take(q, "stride", c.vq.stride, "vq");
  take(q, "codebook_size", c.vq.codebook_size, "vq");
  take(q, "code_dim", c.vq.code_dim, "vq");
  take(q, "hidden", c.vq.hidden, "vq");
  take(q, "beta", c.vq.beta, "vq");
  take(q, "steps", c.vq.steps, "vq");
  take(q, "batch", c.vq.batch, "vq");
  take(q, "lr", c.vq.lr, "vq");
  take(q, "seed", c.vq.seed, "vq");
  take(q, "revive_every", c.vq.revive_every, "vq");
  expect_empty(q, "vq");

  auto p = section(work, "prior");
  take(p, "model_dim", c.prior.model_dim, "prior");
  take(p, "layers", c.prior.layers, "prior");
  take(p, "heads", c.prior.heads, "prior");
  take(p, "insertion_order", c.prior.insertion_order, "prior");
  take(p, "graph_mse_weight", c.prior.graph_mse_weight, "prior");
  take(p, "temperature", c.prior.temperature, "prior");
  take(p, "steps", c.prior.steps, "prior");
  take(p, "batch", c.prior.batch, "prior");
  take(p, "lr", c.prior.lr, "prior");
  take(p, "seed", c.prior.seed, "prior");
  expect_empty(p, "prior");

  auto e = section(work, "eval");
  take(e, "repeats", c.eval.repeats, "eval");
  take(e, "batch", c.eval.batch, "eval");
  take(e, "seed", c.eval.seed, "eval");
  expect_empty(e, "eval");

  expect_empty(work, "(top)");
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("config: cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw UserError("config: " + path + ": " + ex.what());
  }
  return from_json(doc);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json doc;
  doc["data"] = {{"episodes", data.episodes},
                 {"seed", data.seed},
                 {"video_length", data.synth.video_length},
                 {"height", data.synth.height},
                 {"width", data.synth.width},
                 {"min_objects", data.synth.min_objects},
                 {"max_objects", data.synth.max_objects},
                 {"min_given_graphs", data.synth.min_given_graphs}};
  doc["vsg"] = {{"dim", vsg.dim},
                {"max_nodes", vsg.max_nodes},
                {"spatial_layers", vsg.spatial_layers},
                {"temporal_layers", vsg.temporal_layers},
                {"heads", vsg.heads},
                {"frame_patch", vsg.frame_patch},
                {"frame_backbone_dim", vsg.frame_backbone_dim},
                {"frame_layers", vsg.frame_layers},
                {"frame_heads", vsg.frame_heads},
                {"use_intra", vsg.use_intra},
                {"use_inter", vsg.use_inter},
                {"use_finegrain", vsg.use_finegrain},
                {"steps", vsg.steps},
                {"batch", vsg.batch},
                {"lr", vsg.lr},
                {"frame_backbone_lr_scale", vsg.frame_backbone_lr_scale},
                {"seed", vsg.seed}};
  doc["vq"] = {{"stride", vq.stride},
               {"codebook_size", vq.codebook_size},
               {"code_dim", vq.code_dim},
               {"hidden", vq.hidden},
               {"beta", vq.beta},
               {"steps", vq.steps},
               {"batch", vq.batch},
               {"lr", vq.lr},
               {"seed", vq.seed},
               {"revive_every", vq.revive_every}};
  doc["prior"] = {{"model_dim", prior.model_dim},
                  {"layers", prior.layers},
                  {"heads", prior.heads},
                  {"insertion_order", prior.insertion_order},
                  {"graph_mse_weight", prior.graph_mse_weight},
                  {"temperature", prior.temperature},
                  {"steps", prior.steps},
                  {"batch", prior.batch},
                  {"lr", prior.lr},
                  {"seed", prior.seed}};
  doc["eval"] = {{"repeats", eval.repeats}, {"batch", eval.batch}, {"seed", eval.seed}};
  return doc;
}

std::string RunConfig::hash() const {
  const std::string canon = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

VsgEncoderConfig RunConfig::vsg_config() const {
  VsgEncoderConfig c;
  c.dim = vsg.dim;
  c.max_nodes = vsg.max_nodes;
  c.spatial_layers = vsg.spatial_layers;
  c.temporal_layers = vsg.temporal_layers;
  c.heads = vsg.heads;
  c.video_length = data.synth.video_length;
  c.validate();
  return c;
}

FrameEncoderConfig RunConfig::frame_config() const {
  FrameEncoderConfig c;
  c.height = data.synth.height;
  c.width = data.synth.width;
  c.channels = 1;
  c.patch = vsg.frame_patch;
  c.backbone_dim = vsg.frame_backbone_dim;
  c.dim = vsg.dim;  // frame vectors live in the graph representation space
  c.layers = vsg.frame_layers;
  c.heads = vsg.frame_heads;
  c.validate();
  return c;
}

VqConfig RunConfig::vq_config() const {
  VqConfig c;
  c.height = data.synth.height;
  c.width = data.synth.width;
  c.channels = 1;
  c.stride = vq.stride;
  c.codebook_size = vq.codebook_size;
  c.code_dim = vq.code_dim;
  c.hidden = vq.hidden;
  c.beta = vq.beta;
  c.validate();
  return c;
}

PriorConfig RunConfig::prior_config() const {
  PriorConfig c;
  c.codebook_size = vq.codebook_size;
  c.cells = vq_config().cells();
  c.video_length = data.synth.video_length;
  c.graph_dim = vsg.dim;
  c.model_dim = prior.model_dim;
  c.layers = prior.layers;
  c.heads = prior.heads;
  c.insertion_order = prior.insertion_order;
  c.graph_mse_weight = prior.graph_mse_weight;
  c.validate();
  return c;
}

void RunConfig::validate() const {
  // Module validation failures are configuration mistakes here, so they are
  // rethrown in the taxonomy that maps to the config-error exit code.
  try {
    data.synth.validate();
    vsg_config();
    frame_config();
    vq_config();
    prior_config();
  } catch (const std::invalid_argument& ex) {
    throw UserError(std::string("config: ") + ex.what());
  }
  if (data.episodes < 1) throw UserError("config: data.episodes must be positive");
  auto check_stage = [](int steps, int batch, double lr, const char* name) {
    if (steps < 0) throw UserError(std::string("config: ") + name + ".steps must be >= 0");
    if (batch < 1) throw UserError(std::string("config: ") + name + ".batch must be positive");
    if (!(lr > 0)) throw UserError(std::string("config: ") + name + ".lr must be positive");
  };
  check_stage(vsg.steps, vsg.batch, vsg.lr, "vsg");
  check_stage(vq.steps, vq.batch, vq.lr, "vq");
  check_stage(prior.steps, prior.batch, prior.lr, "prior");
  if (!(vsg.frame_backbone_lr_scale >= 0))
    throw UserError("config: vsg.frame_backbone_lr_scale must be >= 0");
  if (vq.revive_every < 0) throw UserError("config: vq.revive_every must be >= 0");
  if (!(prior.temperature > 0)) throw UserError("config: prior.temperature must be positive");
  if (eval.repeats < 1) throw UserError("config: eval.repeats must be >= 1");
  if (eval.batch < 2) throw UserError("config: eval.batch must be >= 2");
}

}  // namespace sgs
