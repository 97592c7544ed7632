#pragma once
// Scene graphs over a fixed vocabulary, their validation, the canonical
// token linearization consumed by the graph encoder, and the structural
// encodings that tie tokens to node slots.
//
// Linearization order: one context token, then the node tokens in listed
// order, then the edge tokens in listed order. Edge tokens carry the node
// slots (positions in the node list) of their endpoints; the edge encoding
// is the difference of the endpoint node encodings, so swapping endpoints
// flips its sign and a self-loop encodes to the zero vector.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgs/tensor.hpp"

namespace sgs {

struct Vocabulary {
  std::vector<std::string> objects;
  std::vector<std::string> predicates;

  int object_index(const std::string& name) const;
  int predicate_index(const std::string& name) const;
  // FNV-1a over all names, as fixed-width hex; stored in checkpoints so a
  // model is never silently applied to a different vocabulary.
  std::string hash() const;
};

std::vector<std::string> validate_vocabulary(const Vocabulary& vocab);

struct SceneNode {
  int id = 0;
  int category = 0;  // index into Vocabulary::objects
};

struct SceneEdge {
  int src = 0;  // node ids
  int dst = 0;
  int predicate = 0;  // index into Vocabulary::predicates
};

struct SceneGraph {
  std::vector<SceneNode> nodes;
  std::vector<SceneEdge> edges;
};

// Returns human-readable violations; empty means valid. Duplicate edges and
// self-loops are permitted.
std::vector<std::string> validate_graph(const SceneGraph& g, const Vocabulary& vocab,
                                        int max_nodes);

// Sparse per-frame graph annotations for a video of `length` frames.
struct GraphTrack {
  int length = 0;
  std::map<int, SceneGraph> entries;  // frame index -> graph
};

std::vector<std::string> validate_track(const GraphTrack& track, const Vocabulary& vocab,
                                        int max_nodes);

enum class TokenKind { Context, Node, Edge };

struct GraphToken {
  TokenKind kind = TokenKind::Context;
  int category = -1;   // object category (nodes) or predicate (edges)
  int node_slot = -1;  // slot of this node token
  int src_slot = -1;   // endpoint slots for edge tokens
  int dst_slot = -1;
};

struct TokenSequence {
  std::vector<GraphToken> tokens;
  int node_count = 0;
  int edge_count = 0;
};

// Throws UserError when the graph fails validation.
TokenSequence linearize(const SceneGraph& g, const Vocabulary& vocab, int max_nodes);

// Learned structural encoding tables: one vector for the context token and
// one per node slot. Two instances of the same category in different slots
// get distinct encodings.
template <class S>
struct StructuralEncodingTable {
  Tensor<S> context;  // [d]
  Tensor<S> node;     // [max_nodes, d]

  int dim() const { return context.extent(0); }
  int max_nodes() const { return node.extent(0); }
};

template <class S>
Tensor<S> structural_encodings(const TokenSequence& seq, const StructuralEncodingTable<S>& table) {
  const int d = table.dim();
  const int max_nodes = table.max_nodes();
  std::vector<Tensor<S>> rows;
  rows.reserve(seq.tokens.size());
  auto ctx_row = reshape(table.context, {1, d});
  for (const GraphToken& tok : seq.tokens) {
    switch (tok.kind) {
      case TokenKind::Context:
        rows.push_back(ctx_row);
        break;
      case TokenKind::Node:
        if (tok.node_slot < 0 || tok.node_slot >= max_nodes)
          throw std::invalid_argument("structural_encodings: node slot out of table range");
        rows.push_back(take_rows(table.node, {tok.node_slot}));
        break;
      case TokenKind::Edge: {
        if (tok.src_slot < 0 || tok.src_slot >= max_nodes || tok.dst_slot < 0 ||
            tok.dst_slot >= max_nodes)
          throw std::invalid_argument("structural_encodings: edge slot out of table range");
        auto e = sub(take_rows(table.node, {tok.src_slot}), take_rows(table.node, {tok.dst_slot}));
        rows.push_back(e);
        break;
      }
    }
  }
  return concat_rows(rows);
}

// --- JSON formats ---
//
// Graph:      {"nodes": [{"id": 0, "category": "circle"}, ...],
//              "edges": [{"src": 0, "dst": 1, "predicate": "left-of"}, ...]}
// Track:      {"length": 16, "entries": {"0": <graph>, "5": <graph>}}
// Vocabulary: {"objects": [...], "predicates": [...]}
//
// Loaders throw UserError on malformed input or validation failures.

nlohmann::json vocabulary_to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const nlohmann::json& j);

nlohmann::json graph_to_json(const SceneGraph& g, const Vocabulary& vocab);
SceneGraph graph_from_json(const nlohmann::json& j, const Vocabulary& vocab);

nlohmann::json track_to_json(const GraphTrack& track, const Vocabulary& vocab);
GraphTrack track_from_json(const nlohmann::json& j, const Vocabulary& vocab, int max_nodes);

}  // namespace sgs
