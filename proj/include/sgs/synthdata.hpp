#pragma once
// Procedural episode generator and rule-based semantic oracle. Episodes are
// short grayscale videos of geometric shapes sliding horizontally; each shape
// category renders in its own intensity band so a parsed frame can be
// attributed back to objects without any side channel. Ground-truth sparse
// scene-graph tracks are emitted alongside, and every emitted graph is
// oracle-verified against the trajectories at generation time.
//
// The oracle comes in two flavors sharing one rule set: a trajectory check
// for generated data, and a pixel check that recovers objects from any video
// by band classification, so synthesized frames can be scored too.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sgs/rng.hpp"
#include "sgs/scenegraph.hpp"
#include "sgs/tensor.hpp"

namespace sgs {

// Shapes as objects; geometric relations plus motion predicates expressed as
// self-loop edges. Category order is load-bearing: it fixes intensity bands.
Vocabulary synth_vocabulary();

// Band center intensity of a shape category.
float category_intensity(int category);

// Nearest-band classification of one pixel value; -1 means background.
int classify_pixel(float v);

struct SynthConfig {
  int video_length = 8;
  int height = 16;
  int width = 16;
  int min_objects = 2;
  int max_objects = 3;
  int min_given_graphs = 3;

  void validate() const;
};

struct ObjectTrack {
  int category = 0;
  std::vector<double> xs, ys;  // center position per frame
};

struct Episode {
  std::vector<Tensor<float>> video;  // one [H,W,1] tensor per frame
  GraphTrack track;
  std::vector<ObjectTrack> objects;  // ground truth, node id = index
  std::uint64_t seed = 0;
};

// Deterministic per (config, seed). Graphs appear at uniformly spaced frames,
// always including frame 0, and carry only predicates the oracle verifies.
Episode generate_episode(const SynthConfig& cfg, std::uint64_t seed);

struct OracleReport {
  bool pass = true;
  std::vector<std::string> violations;  // "subject predicate object" triplets
};

// Checks one graph against the ground-truth trajectories at frame t.
OracleReport semantic_oracle(const Episode& ep, const SceneGraph& g, int t);

// Checks one graph against rendered or synthesized pixels at frame t,
// recovering centroids and masks by intensity-band classification.
OracleReport semantic_oracle_pixels(const std::vector<Tensor<float>>& video, const SceneGraph& g,
                                    int t, const SynthConfig& cfg);

// 8-bit binary PGM frame files.
void write_pgm(const std::filesystem::path& path, const Tensor<float>& frame);
Tensor<float> read_pgm(const std::filesystem::path& path);

// Episode directory: frames/frame_NN.pgm, track.json, meta.json.
void save_episode(const std::filesystem::path& dir, const Episode& ep, const SynthConfig& cfg);
Episode load_episode(const std::filesystem::path& dir);

}  // namespace sgs
