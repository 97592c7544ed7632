#include "sgs/scenegraph.hpp"

#include <set>
#include <unordered_map>
#include <unordered_set>

#include "sgs/errors.hpp"

namespace sgs {

int Vocabulary::object_index(const std::string& name) const {
  for (size_t i = 0; i < objects.size(); ++i)
    if (objects[i] == name) return static_cast<int>(i);
  return -1;
}

int Vocabulary::predicate_index(const std::string& name) const {
  for (size_t i = 0; i < predicates.size(); ++i)
    if (predicates[i] == name) return static_cast<int>(i);
  return -1;
}

std::string Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::string& s) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= 0xff;  // separator
    h *= 1099511628211ull;
  };
  for (const auto& s : objects) mix(s);
  h ^= 0xfe;
  h *= 1099511628211ull;
  for (const auto& s : predicates) mix(s);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<std::string> validate_vocabulary(const Vocabulary& vocab) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& name : vocab.objects) {
    if (name.empty()) out.push_back("empty object category name");
    if (!seen.insert("o:" + name).second) out.push_back("duplicate object category: " + name);
  }
  for (const auto& name : vocab.predicates) {
    if (name.empty()) out.push_back("empty predicate name");
    if (!seen.insert("p:" + name).second) out.push_back("duplicate predicate: " + name);
  }
  return out;
}

std::vector<std::string> validate_graph(const SceneGraph& g, const Vocabulary& vocab,
                                        int max_nodes) {
  std::vector<std::string> out;
  if (static_cast<int>(g.nodes.size()) > max_nodes)
    out.push_back("node budget exceeded: " + std::to_string(g.nodes.size()) + " nodes, limit " +
                  std::to_string(max_nodes));
  std::unordered_set<int> ids;
  for (const auto& n : g.nodes) {
    if (!ids.insert(n.id).second) out.push_back("duplicate node id " + std::to_string(n.id));
    if (n.category < 0 || n.category >= static_cast<int>(vocab.objects.size()))
      out.push_back("node " + std::to_string(n.id) + " has unknown category index " +
                    std::to_string(n.category));
  }
  for (const auto& e : g.edges) {
    if (!ids.count(e.src))
      out.push_back("dangling edge: missing node id " + std::to_string(e.src));
    if (!ids.count(e.dst))
      out.push_back("dangling edge: missing node id " + std::to_string(e.dst));
    if (e.predicate < 0 || e.predicate >= static_cast<int>(vocab.predicates.size()))
      out.push_back("edge has unknown predicate index " + std::to_string(e.predicate));
  }
  return out;
}

std::vector<std::string> validate_track(const GraphTrack& track, const Vocabulary& vocab,
                                        int max_nodes) {
  std::vector<std::string> out;
  if (track.length < 1) out.push_back("track length must be at least 1");
  if (track.entries.empty()) out.push_back("track has no graph entries");
  for (const auto& [frame, graph] : track.entries) {
    if (frame < 0 || frame >= track.length)
      out.push_back("graph frame " + std::to_string(frame) + " outside [0, " +
                    std::to_string(track.length) + ")");
    for (auto& v : validate_graph(graph, vocab, max_nodes))
      out.push_back("frame " + std::to_string(frame) + ": " + v);
  }
  return out;
}

TokenSequence linearize(const SceneGraph& g, const Vocabulary& vocab, int max_nodes) {
  auto violations = validate_graph(g, vocab, max_nodes);
  if (!violations.empty()) {
    std::string msg = "invalid scene graph:";
    for (auto& v : violations) msg += "\n  " + v;
    throw UserError(msg);
  }
  std::unordered_map<int, int> slot_of_id;
  for (size_t i = 0; i < g.nodes.size(); ++i) slot_of_id[g.nodes[i].id] = static_cast<int>(i);

  TokenSequence seq;
  seq.node_count = static_cast<int>(g.nodes.size());
  seq.edge_count = static_cast<int>(g.edges.size());
  seq.tokens.reserve(1 + g.nodes.size() + g.edges.size());
  seq.tokens.push_back(GraphToken{TokenKind::Context, -1, -1, -1, -1});
  for (size_t i = 0; i < g.nodes.size(); ++i)
    seq.tokens.push_back(
        GraphToken{TokenKind::Node, g.nodes[i].category, static_cast<int>(i), -1, -1});
  for (const auto& e : g.edges)
    seq.tokens.push_back(
        GraphToken{TokenKind::Edge, e.predicate, -1, slot_of_id[e.src], slot_of_id[e.dst]});
  return seq;
}

// --- JSON ---

namespace {

const nlohmann::json& expect_field(const nlohmann::json& j, const char* key,
                                   const char* context) {
  auto it = j.find(key);
  if (it == j.end())
    throw UserError(std::string(context) + ": missing field '" + key + "'");
  return *it;
}

void expect_object(const nlohmann::json& j, const char* context) {
  if (!j.is_object()) throw UserError(std::string(context) + ": expected a JSON object");
}

}  // namespace

nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
  return nlohmann::json{{"objects", vocab.objects}, {"predicates", vocab.predicates}};
}

Vocabulary vocabulary_from_json(const nlohmann::json& j) {
  expect_object(j, "vocabulary");
  Vocabulary vocab;
  const auto& objs = expect_field(j, "objects", "vocabulary");
  const auto& preds = expect_field(j, "predicates", "vocabulary");
  if (!objs.is_array() || !preds.is_array())
    throw UserError("vocabulary: 'objects' and 'predicates' must be arrays of names");
  for (const auto& o : objs) {
    if (!o.is_string()) throw UserError("vocabulary: object names must be strings");
    vocab.objects.push_back(o.get<std::string>());
  }
  for (const auto& p : preds) {
    if (!p.is_string()) throw UserError("vocabulary: predicate names must be strings");
    vocab.predicates.push_back(p.get<std::string>());
  }
  auto violations = validate_vocabulary(vocab);
  if (!violations.empty()) throw UserError("vocabulary: " + violations.front());
  return vocab;
}

nlohmann::json graph_to_json(const SceneGraph& g, const Vocabulary& vocab) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes)
    nodes.push_back({{"id", n.id}, {"category", vocab.objects.at(static_cast<size_t>(n.category))}});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges)
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"predicate", vocab.predicates.at(static_cast<size_t>(e.predicate))}});
  return nlohmann::json{{"nodes", nodes}, {"edges", edges}};
}

SceneGraph graph_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  expect_object(j, "graph");
  SceneGraph g;
  const auto& nodes = expect_field(j, "nodes", "graph");
  const auto& edges = expect_field(j, "edges", "graph");
  if (!nodes.is_array() || !edges.is_array())
    throw UserError("graph: 'nodes' and 'edges' must be arrays");
  for (const auto& n : nodes) {
    expect_object(n, "graph node");
    const auto& id = expect_field(n, "id", "graph node");
    const auto& cat = expect_field(n, "category", "graph node");
    if (!id.is_number_integer() || !cat.is_string())
      throw UserError("graph node: 'id' must be an integer and 'category' a string");
    const int ci = vocab.object_index(cat.get<std::string>());
    if (ci < 0) throw UserError("graph node: unknown category '" + cat.get<std::string>() + "'");
    g.nodes.push_back(SceneNode{id.get<int>(), ci});
  }
  for (const auto& e : edges) {
    expect_object(e, "graph edge");
    const auto& src = expect_field(e, "src", "graph edge");
    const auto& dst = expect_field(e, "dst", "graph edge");
    const auto& pred = expect_field(e, "predicate", "graph edge");
    if (!src.is_number_integer() || !dst.is_number_integer() || !pred.is_string())
      throw UserError("graph edge: 'src'/'dst' must be integers and 'predicate' a string");
    const int pi = vocab.predicate_index(pred.get<std::string>());
    if (pi < 0) throw UserError("graph edge: unknown predicate '" + pred.get<std::string>() + "'");
    g.edges.push_back(SceneEdge{src.get<int>(), dst.get<int>(), pi});
  }
  return g;
}

nlohmann::json track_to_json(const GraphTrack& track, const Vocabulary& vocab) {
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [frame, graph] : track.entries)
    entries[std::to_string(frame)] = graph_to_json(graph, vocab);
  return nlohmann::json{{"length", track.length}, {"entries", entries}};
}

GraphTrack track_from_json(const nlohmann::json& j, const Vocabulary& vocab, int max_nodes) {
  expect_object(j, "track");
  GraphTrack track;
  const auto& length = expect_field(j, "length", "track");
  const auto& entries = expect_field(j, "entries", "track");
  if (!length.is_number_integer() || !entries.is_object())
    throw UserError("track: 'length' must be an integer and 'entries' an object");
  track.length = length.get<int>();
  for (auto it = entries.begin(); it != entries.end(); ++it) {
    int frame;
    try {
      size_t pos = 0;
      frame = std::stoi(it.key(), &pos);
      if (pos != it.key().size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UserError("track: entry key '" + it.key() + "' is not a frame index");
    }
    track.entries[frame] = graph_from_json(it.value(), vocab);
  }
  auto violations = validate_track(track, vocab, max_nodes);
  if (!violations.empty()) {
    std::string msg = "invalid track:";
    for (auto& v : violations) msg += "\n  " + v;
    throw UserError(msg);
  }
  return track;
}

}  // namespace sgs
