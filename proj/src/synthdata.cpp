#include "sgs/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "sgs/errors.hpp"
#include "sgs/tensor_io.hpp"

namespace sgs {

namespace {

// Predicate indices in synth_vocabulary(). Oracle and generator agree on
// these by construction.
enum Pred : int {
  kLeftOf = 0,
  kRightOf = 1,
  kAbove = 2,
  kBelow = 3,
  kTouching = 4,
  kMovingRight = 5,
  kMovingLeft = 6,
  kStatic = 7,
};

// Oracle thresholds. Image coordinates, y grows downward.
constexpr double kMargin = 1.0;           // pixels, spatial relations
constexpr double kMotionThreshold = 1.0;  // px/frame over the window
constexpr int kMotionWindow = 2;          // frames either side
constexpr int kMinPixels = 5;             // band pixels needed to accept an object

// The generator emits a predicate only when it holds with slack beyond the
// oracle margin, so band-classified centroids (off by a fraction of a pixel)
// still verify.
constexpr double kEmitMargin = 2.0;
constexpr double kEmitMotion = 1.4;
constexpr double kEmitStatic = 0.1;

// Pixel-center membership test of one shape at center (cx, cy).
bool shape_covers(int category, double cx, double cy, int px, int py) {
  const double dx = px - cx, dy = py - cy;
  switch (category) {
    case 0:  // circle, radius 2.5
      return dx * dx + dy * dy <= 2.5 * 2.5;
    case 1:  // square, side 5
      return std::abs(dx) <= 2.0 && std::abs(dy) <= 2.0;
    case 2:  // triangle, apex up
      return dy >= -2.0 && dy <= 2.0 && std::abs(dx) <= (dy + 2.0) / 2.0;
    default:
      return false;
  }
}

using Mask = std::vector<std::pair<int, int>>;  // (x, y) pixel coordinates

Mask render_mask(int category, double cx, double cy, int width, int height) {
  Mask m;
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px)
      if (shape_covers(category, cx, cy, px, py)) m.emplace_back(px, py);
  return m;
}

bool masks_touch(const Mask& a, const Mask& b) {
  for (const auto& [ax, ay] : a)
    for (const auto& [bx, by] : b)
      if (std::abs(ax - bx) <= 1 && std::abs(ay - by) <= 1) return true;
  return false;
}

// One observed object: centroid plus occupied pixels.
struct Observation {
  double cx = 0, cy = 0;
  Mask mask;
};

// Mean per-frame x displacement over the motion window around t.
std::optional<double> window_velocity(const std::vector<std::optional<Observation>>& per_frame,
                                      int t) {
  const int T = static_cast<int>(per_frame.size());
  const int a = std::max(0, t - kMotionWindow);
  const int b = std::min(T - 1, t + kMotionWindow);
  if (b <= a) return std::nullopt;  // single-frame video: no motion defined
  if (!per_frame[static_cast<size_t>(a)] || !per_frame[static_cast<size_t>(b)])
    return std::nullopt;
  return (per_frame[static_cast<size_t>(b)]->cx - per_frame[static_cast<size_t>(a)]->cx) /
         static_cast<double>(b - a);
}

// Shared rule set. `observe(node_index, frame)` yields the object's state at
// any frame (for motion windows); nullopt means the object was not found.
template <class ObserveFn>
OracleReport check_graph(const SceneGraph& g, const Vocabulary& vocab, int t, int T,
                         ObserveFn&& observe) {
  OracleReport report;
  auto object_name = [&](int node_id) -> std::string {
    for (const auto& n : g.nodes)
      if (n.id == node_id) return vocab.objects[static_cast<size_t>(n.category)];
    return "?";
  };
  auto fail = [&](const SceneEdge& e) {
    report.pass = false;
    report.violations.push_back(object_name(e.src) + " " +
                                vocab.predicates[static_cast<size_t>(e.predicate)] + " " +
                                object_name(e.dst));
  };

  // Resolve every node once at the graph's own frame.
  std::vector<std::optional<Observation>> now;
  for (const auto& n : g.nodes) now.push_back(observe(n, t));
  auto index_of = [&](int node_id) -> int {
    for (size_t i = 0; i < g.nodes.size(); ++i)
      if (g.nodes[static_cast<size_t>(i)].id == node_id) return static_cast<int>(i);
    return -1;
  };

  for (const auto& e : g.edges) {
    if (e.predicate < 0 || e.predicate >= static_cast<int>(vocab.predicates.size()))
      throw UserError("semantic oracle: unknown predicate index " + std::to_string(e.predicate));
    const int si = index_of(e.src), di = index_of(e.dst);
    if (si < 0 || di < 0) {
      fail(e);
      continue;
    }
    const auto& src = now[static_cast<size_t>(si)];
    const auto& dst = now[static_cast<size_t>(di)];
    if (!src || !dst) {
      fail(e);
      continue;
    }
    bool ok = false;
    switch (e.predicate) {
      case kLeftOf:
        ok = src->cx < dst->cx - kMargin;
        break;
      case kRightOf:
        ok = src->cx > dst->cx + kMargin;
        break;
      case kAbove:  // y grows downward
        ok = src->cy < dst->cy - kMargin;
        break;
      case kBelow:
        ok = src->cy > dst->cy + kMargin;
        break;
      case kTouching:
        ok = masks_touch(src->mask, dst->mask);
        break;
      case kMovingRight:
      case kMovingLeft:
      case kStatic: {
        std::vector<std::optional<Observation>> per_frame;
        per_frame.reserve(static_cast<size_t>(T));
        const auto& node = g.nodes[static_cast<size_t>(si)];
        for (int f = 0; f < T; ++f) per_frame.push_back(observe(node, f));
        auto v = window_velocity(per_frame, t);
        if (!v) {
          ok = false;
        } else if (e.predicate == kMovingRight) {
          ok = *v > kMotionThreshold;
        } else if (e.predicate == kMovingLeft) {
          ok = *v < -kMotionThreshold;
        } else {
          ok = std::abs(*v) < kMotionThreshold;
        }
        break;
      }
      default:
        throw UserError("semantic oracle: unknown predicate index " +
                        std::to_string(e.predicate));
    }
    if (!ok) fail(e);
  }
  return report;
}

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%02d.pgm", t);
  return buf;
}

}  // namespace

Vocabulary synth_vocabulary() {
  Vocabulary v;
  v.objects = {"circle", "square", "triangle"};
  v.predicates = {"left-of",  "right-of",     "above",       "below",
                  "touching", "moving-right", "moving-left", "static"};
  return v;
}

float category_intensity(int category) {
  switch (category) {
    case 0:
      return 0.375f;
    case 1:
      return 0.625f;
    case 2:
      return 0.875f;
    default:
      throw std::invalid_argument("category_intensity: unknown category");
  }
}

int classify_pixel(float v) {
  if (v < 0.1875f) return -1;
  if (v < 0.5f) return 0;
  if (v < 0.75f) return 1;
  return 2;
}

void SynthConfig::validate() const {
  if (video_length < 1) throw std::invalid_argument("synthdata: need at least one frame");
  if (height < 12 || width < 12)
    throw std::invalid_argument("synthdata: canvas too small for the shapes");
  if (min_objects < 1 || max_objects < min_objects || max_objects > 3)
    throw std::invalid_argument(
        "synthdata: object count must lie in [1,3]; one object per shape category");
  if (min_given_graphs < 1 || min_given_graphs > video_length)
    throw std::invalid_argument("synthdata: graph count must lie in [1, video_length]");
}

Episode generate_episode(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = Rng(seed);
  Episode ep;
  ep.seed = seed;

  // Distinct shape categories so band classification is unambiguous.
  const int n = cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);
  std::vector<int> cats = {0, 1, 2};
  for (size_t i = cats.size() - 1; i > 0; --i)
    std::swap(cats[i], cats[static_cast<size_t>(rng.uniform_int(static_cast<int>(i) + 1))]);
  cats.resize(static_cast<size_t>(n));

  // Rejection-sample initial centers with generous pairwise separation.
  const double lo_x = 3.0, hi_x = cfg.width - 4.0;
  const double lo_y = 3.0, hi_y = cfg.height - 4.0;
  std::vector<double> x0(static_cast<size_t>(n)), y0(static_cast<size_t>(n));
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 500) throw std::runtime_error("synthdata: cannot place objects on the canvas");
    for (int i = 0; i < n; ++i) {
      x0[static_cast<size_t>(i)] = rng.uniform(lo_x, hi_x);
      y0[static_cast<size_t>(i)] = rng.uniform(lo_y, hi_y);
    }
    bool ok = true;
    for (int i = 0; i < n && ok; ++i)
      for (int j = i + 1; j < n && ok; ++j) {
        const double dx = x0[static_cast<size_t>(i)] - x0[static_cast<size_t>(j)];
        const double dy = y0[static_cast<size_t>(i)] - y0[static_cast<size_t>(j)];
        ok = dx * dx + dy * dy >= 5.0 * 5.0;
      }
    if (ok) break;
  }

  // Horizontal motion only, bouncing off the walls; vertical layout is static
  // so above/below relations stay stable while left-of/right-of evolve.
  const double wall_lo = 2.5, wall_hi = cfg.width - 3.5;
  ep.objects.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& obj = ep.objects[static_cast<size_t>(i)];
    obj.category = cats[static_cast<size_t>(i)];
    double x = x0[static_cast<size_t>(i)], y = y0[static_cast<size_t>(i)];
    double vx = 1.5 * (rng.uniform_int(3) - 1);
    for (int t = 0; t < cfg.video_length; ++t) {
      obj.xs.push_back(x);
      obj.ys.push_back(y);
      x += vx;
      if (x > wall_hi) {
        x = 2 * wall_hi - x;
        vx = -vx;
      }
      if (x < wall_lo) {
        x = 2 * wall_lo - x;
        vx = -vx;
      }
    }
  }

  // Render: brightest band wins where shapes overlap.
  for (int t = 0; t < cfg.video_length; ++t) {
    std::vector<float> data(static_cast<size_t>(cfg.height) * cfg.width, 0.0f);
    for (const auto& obj : ep.objects) {
      const float val = category_intensity(obj.category);
      for (const auto& [px, py] : render_mask(obj.category, obj.xs[static_cast<size_t>(t)],
                                              obj.ys[static_cast<size_t>(t)], cfg.width,
                                              cfg.height))
        data[static_cast<size_t>(py) * cfg.width + px] =
            std::max(data[static_cast<size_t>(py) * cfg.width + px], val);
    }
    ep.video.push_back(Tensor<float>::from({cfg.height, cfg.width, 1}, data));
  }

  // Uniformly spaced graph frames, frame 0 always present.
  int given = cfg.min_given_graphs + rng.uniform_int(2);
  given = std::min(given, cfg.video_length);
  std::vector<int> frames;
  if (given == 1) {
    frames.push_back(0);
  } else {
    for (int i = 0; i < given; ++i)
      frames.push_back(static_cast<int>(std::lround(
          static_cast<double>(i) * (cfg.video_length - 1) / (given - 1))));
  }

  ep.track.length = cfg.video_length;
  for (int t : frames) {
    SceneGraph g;
    for (int i = 0; i < n; ++i)
      g.nodes.push_back(SceneNode{i, ep.objects[static_cast<size_t>(i)].category});

    std::vector<Mask> masks;
    for (const auto& obj : ep.objects)
      masks.push_back(render_mask(obj.category, obj.xs[static_cast<size_t>(t)],
                                  obj.ys[static_cast<size_t>(t)], cfg.width, cfg.height));

    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double dx = ep.objects[static_cast<size_t>(j)].xs[static_cast<size_t>(t)] -
                          ep.objects[static_cast<size_t>(i)].xs[static_cast<size_t>(t)];
        const double dy = ep.objects[static_cast<size_t>(j)].ys[static_cast<size_t>(t)] -
                          ep.objects[static_cast<size_t>(i)].ys[static_cast<size_t>(t)];
        if (dx > kEmitMargin) g.edges.push_back(SceneEdge{i, j, kLeftOf});
        if (dx < -kEmitMargin) g.edges.push_back(SceneEdge{i, j, kRightOf});
        if (dy > kEmitMargin) g.edges.push_back(SceneEdge{i, j, kAbove});
        if (dy < -kEmitMargin) g.edges.push_back(SceneEdge{i, j, kBelow});
        if (masks_touch(masks[static_cast<size_t>(i)], masks[static_cast<size_t>(j)]))
          g.edges.push_back(SceneEdge{i, j, kTouching});
      }

    for (int i = 0; i < n; ++i) {
      const auto& xs = ep.objects[static_cast<size_t>(i)].xs;
      const int a = std::max(0, t - kMotionWindow);
      const int b = std::min(cfg.video_length - 1, t + kMotionWindow);
      if (b <= a) continue;
      const double v = (xs[static_cast<size_t>(b)] - xs[static_cast<size_t>(a)]) / (b - a);
      if (v > kEmitMotion)
        g.edges.push_back(SceneEdge{i, i, kMovingRight});
      else if (v < -kEmitMotion)
        g.edges.push_back(SceneEdge{i, i, kMovingLeft});
      else if (std::abs(v) <= kEmitStatic)
        g.edges.push_back(SceneEdge{i, i, kStatic});
    }

    ep.track.entries.emplace(t, std::move(g));
  }

  // Construction invariant: everything emitted verifies against the truth.
  for (const auto& [t, g] : ep.track.entries) {
    auto report = semantic_oracle(ep, g, t);
    if (!report.pass)
      throw std::logic_error("synthdata: emitted graph fails its own oracle at frame " +
                             std::to_string(t));
  }
  return ep;
}

OracleReport semantic_oracle(const Episode& ep, const SceneGraph& g, int t) {
  const auto vocab = synth_vocabulary();
  const int T = static_cast<int>(ep.video.size());
  if (t < 0 || t >= T) throw std::invalid_argument("semantic_oracle: frame out of range");
  const int width = ep.video[0].extent(1), height = ep.video[0].extent(0);
  auto observe = [&](const SceneNode& node, int frame) -> std::optional<Observation> {
    if (node.id < 0 || node.id >= static_cast<int>(ep.objects.size())) return std::nullopt;
    const auto& obj = ep.objects[static_cast<size_t>(node.id)];
    if (obj.category != node.category) return std::nullopt;
    Observation obs;
    obs.cx = obj.xs[static_cast<size_t>(frame)];
    obs.cy = obj.ys[static_cast<size_t>(frame)];
    obs.mask = render_mask(obj.category, obs.cx, obs.cy, width, height);
    return obs;
  };
  return check_graph(g, vocab, t, T, observe);
}

OracleReport semantic_oracle_pixels(const std::vector<Tensor<float>>& video, const SceneGraph& g,
                                    int t, const SynthConfig& cfg) {
  const auto vocab = synth_vocabulary();
  const int T = static_cast<int>(video.size());
  if (t < 0 || t >= T) throw std::invalid_argument("semantic_oracle: frame out of range");

  // Band-classify each frame once per category on demand.
  auto find_category = [&](int category, int frame) -> std::optional<Observation> {
    const auto& fr = video[static_cast<size_t>(frame)];
    if (fr.extent(0) != cfg.height || fr.extent(1) != cfg.width)
      throw std::invalid_argument("semantic_oracle: frame shape mismatch");
    auto v = fr.value();
    Observation obs;
    double sx = 0, sy = 0;
    for (int py = 0; py < cfg.height; ++py)
      for (int px = 0; px < cfg.width; ++px)
        if (classify_pixel(v[static_cast<size_t>(py) * cfg.width + px]) == category) {
          obs.mask.emplace_back(px, py);
          sx += px;
          sy += py;
        }
    if (static_cast<int>(obs.mask.size()) < kMinPixels) return std::nullopt;
    obs.cx = sx / static_cast<double>(obs.mask.size());
    obs.cy = sy / static_cast<double>(obs.mask.size());
    return obs;
  };
  auto observe = [&](const SceneNode& node, int frame) {
    return find_category(node.category, frame);
  };
  return check_graph(g, vocab, t, T, observe);
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& frame) {
  require_rank(frame, 3, "write_pgm");
  if (frame.extent(2) != 1) throw std::invalid_argument("write_pgm: single channel only");
  const int h = frame.extent(0), w = frame.extent(1);
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  auto v = frame.value();
  for (size_t i = 0; i < v.size(); ++i) {
    const float c = std::min(1.0f, std::max(0.0f, v[i]));
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  write_file_atomic(path, bytes);
}

Tensor<float> read_pgm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw std::runtime_error("pgm: truncated header in " + path.string());
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw std::runtime_error("pgm: not a binary PGM: " + path.string());
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("pgm: unsupported header in " + path.string());
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() - pos != static_cast<size_t>(w) * h)
    throw std::runtime_error("pgm: payload size mismatch in " + path.string());
  std::vector<float> data(static_cast<size_t>(w) * h);
  for (size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  return Tensor<float>::from({h, w, 1}, data);
}

void save_episode(const std::filesystem::path& dir, const Episode& ep, const SynthConfig& cfg) {
  std::filesystem::create_directories(dir / "frames");
  for (size_t t = 0; t < ep.video.size(); ++t)
    write_pgm(dir / "frames" / frame_name(static_cast<int>(t)), ep.video[t]);

  const auto vocab = synth_vocabulary();
  write_file_atomic(dir / "track.json", track_to_json(ep.track, vocab).dump(2) + "\n");

  nlohmann::json meta;
  meta["seed"] = ep.seed;
  meta["config"] = {{"video_length", cfg.video_length},
                    {"height", cfg.height},
                    {"width", cfg.width},
                    {"min_objects", cfg.min_objects},
                    {"max_objects", cfg.max_objects},
                    {"min_given_graphs", cfg.min_given_graphs}};
  meta["vocabulary"] = vocabulary_to_json(vocab);
  meta["objects"] = nlohmann::json::array();
  for (const auto& obj : ep.objects)
    meta["objects"].push_back(
        {{"category", obj.category}, {"xs", obj.xs}, {"ys", obj.ys}});
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Episode load_episode(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw UserError("episode meta.json: " + std::string(e.what()));
  }
  Episode ep;
  SynthConfig cfg;
  try {
    ep.seed = meta.at("seed").get<std::uint64_t>();
    const auto& c = meta.at("config");
    cfg.video_length = c.at("video_length").get<int>();
    cfg.height = c.at("height").get<int>();
    cfg.width = c.at("width").get<int>();
    cfg.min_objects = c.at("min_objects").get<int>();
    cfg.max_objects = c.at("max_objects").get<int>();
    cfg.min_given_graphs = c.at("min_given_graphs").get<int>();
    for (const auto& jo : meta.at("objects")) {
      ObjectTrack obj;
      obj.category = jo.at("category").get<int>();
      obj.xs = jo.at("xs").get<std::vector<double>>();
      obj.ys = jo.at("ys").get<std::vector<double>>();
      ep.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UserError("episode meta.json: " + std::string(e.what()));
  }
  cfg.validate();

  nlohmann::json tj;
  try {
    tj = nlohmann::json::parse(read_file(dir / "track.json"));
  } catch (const nlohmann::json::exception& e) {
    throw UserError("episode track.json: " + std::string(e.what()));
  }
  ep.track = track_from_json(tj, synth_vocabulary(), /*max_nodes=*/5);

  for (int t = 0; t < cfg.video_length; ++t)
    ep.video.push_back(read_pgm(dir / "frames" / frame_name(t)));
  return ep;
}

}  // namespace sgs
