#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "chest/common.hpp"

namespace chest::hin {

using NodeId = std::uint32_t;
using TypeIdx = std::uint16_t;
using EdgeIdx = std::uint16_t;

struct NodeType {
  std::string name;
  NodeId count = 0;
};

struct EdgeType {
  std::string name;
  TypeIdx src_type = 0;
  TypeIdx dst_type = 0;
  bool symmetric = false;
};

struct NodeRef {
  TypeIdx type = 0;
  NodeId id = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
  friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

// Typed-graph schema. The user-item relation is singled out: its source type
// is the user type and its destination type is the item type.
struct Schema {
  std::vector<NodeType> node_types;
  std::vector<EdgeType> edge_types;
  EdgeIdx interaction_edge = 0;

  int type_index(std::string_view name) const {
    for (std::size_t i = 0; i < node_types.size(); ++i)
      if (node_types[i].name == name) return static_cast<int>(i);
    return -1;
  }

  int edge_index(std::string_view name) const {
    for (std::size_t i = 0; i < edge_types.size(); ++i)
      if (edge_types[i].name == name) return static_cast<int>(i);
    return -1;
  }

  TypeIdx user_type() const { return edge_types[interaction_edge].src_type; }
  TypeIdx item_type() const { return edge_types[interaction_edge].dst_type; }

  void validate() const {
    if (node_types.size() < 2)
      throw schema_error("schema needs at least 2 node types");
    if (node_types.size() + edge_types.size() <= 2)
      throw schema_error("schema needs |types|+|relations| > 2");
    for (std::size_t i = 0; i < node_types.size(); ++i)
      for (std::size_t j = i + 1; j < node_types.size(); ++j)
        if (node_types[i].name == node_types[j].name)
          throw schema_error("duplicate node type name: " + node_types[i].name);
    for (const auto& e : edge_types) {
      if (e.src_type >= node_types.size() || e.dst_type >= node_types.size())
        throw schema_error("edge type " + e.name + " references unknown node type");
    }
    if (interaction_edge >= edge_types.size())
      throw schema_error("interaction edge index out of range");
  }
};

struct LoadReport {
  std::vector<std::pair<std::string, std::uint64_t>> relation_counts;
  std::vector<std::string> warnings;
};

// Immutable after load; safe for concurrent reads.
class Hin {
 public:
  struct Adjacency {
    // fwd is indexed by src-type id, rev by dst-type id. For same-type
    // symmetric relations both directions are merged into fwd.
    std::vector<std::vector<NodeId>> fwd;
    std::vector<std::vector<NodeId>> rev;
    std::uint64_t edge_count = 0;
  };

  explicit Hin(Schema schema) : schema_(std::move(schema)) {
    schema_.validate();
    adj_.resize(schema_.edge_types.size());
    for (std::size_t e = 0; e < adj_.size(); ++e) {
      const auto& et = schema_.edge_types[e];
      adj_[e].fwd.resize(schema_.node_types[et.src_type].count);
      adj_[e].rev.resize(schema_.node_types[et.dst_type].count);
    }
    original_ids_.resize(schema_.node_types.size());
    type_offsets_.assign(schema_.node_types.size() + 1, 0);
    for (std::size_t t = 0; t < schema_.node_types.size(); ++t)
      type_offsets_[t + 1] = type_offsets_[t] + schema_.node_types[t].count;
  }

  const Schema& schema() const { return schema_; }

  NodeId type_count(TypeIdx t) const { return schema_.node_types[t].count; }

  std::uint64_t total_nodes() const { return type_offsets_.back(); }

  // Global id space used by the model's node-ID embedding table.
  std::uint64_t global_id(NodeRef n) const { return type_offsets_[n.type] + n.id; }

  std::uint64_t edge_count(EdgeIdx e) const { return adj_[e].edge_count; }

  // Neighbor list for `node` under relation `e`, direction resolved by the
  // node's type. For same-type relations the forward (merged, if symmetric)
  // list is used.
  const std::vector<NodeId>& neighbors(NodeRef node, EdgeIdx e) const {
    const auto& et = schema_.edge_types[e];
    if (node.type == et.src_type) {
      check_id(node);
      return adj_[e].fwd[node.id];
    }
    if (node.type == et.dst_type) {
      check_id(node);
      return adj_[e].rev[node.id];
    }
    throw schema_error("relation " + et.name + " is not incident to node type " +
                       schema_.node_types[node.type].name);
  }

  bool has_edge(NodeRef from, NodeId to, EdgeIdx e) const {
    const auto& ns = neighbors(from, e);
    return std::binary_search(ns.begin(), ns.end(), to);
  }

  const std::vector<NodeId>& items_of(NodeId user) const {
    return neighbors({schema_.user_type(), user}, schema_.interaction_edge);
  }

  // Original-id sidecar (empty when ids were already dense).
  const std::vector<std::uint64_t>& original_ids(TypeIdx t) const {
    return original_ids_[t];
  }

  std::uint64_t original_id(NodeRef n) const {
    const auto& ids = original_ids_[n.type];
    return n.id < ids.size() ? ids[n.id] : n.id;
  }

  // --- construction (used by the loader and by tests building toys) ---

  void add_edge(EdgeIdx e, NodeId src, NodeId dst) {
    const auto& et = schema_.edge_types[e];
    if (src >= type_count(et.src_type) || dst >= type_count(et.dst_type))
      throw schema_error("edge id out of range for relation " + et.name);
    if (et.src_type == et.dst_type && src == dst) return;  // no self-loops
    adj_[e].fwd[src].push_back(dst);
    if (et.src_type == et.dst_type) {
      if (et.symmetric) adj_[e].fwd[dst].push_back(src);
      adj_[e].rev[dst].push_back(src);
      if (et.symmetric) adj_[e].rev[src].push_back(dst);
    } else {
      adj_[e].rev[dst].push_back(src);
    }
  }

  void set_original_ids(TypeIdx t, std::vector<std::uint64_t> ids) {
    original_ids_[t] = std::move(ids);
  }

  // Sorts and dedupes every neighbor list; recomputes edge counts.
  void finalize() {
    for (auto& a : adj_) {
      std::uint64_t n = 0;
      for (auto* side : {&a.fwd, &a.rev}) {
        for (auto& v : *side) {
          std::sort(v.begin(), v.end());
          v.erase(std::unique(v.begin(), v.end()), v.end());
        }
      }
      for (auto& v : a.fwd) n += v.size();
      a.edge_count = n;
    }
  }

  bool structurally_equal(const Hin& o) const {
    if (schema_.node_types.size() != o.schema_.node_types.size()) return false;
    for (std::size_t t = 0; t < schema_.node_types.size(); ++t)
      if (type_count(static_cast<TypeIdx>(t)) !=
          o.type_count(static_cast<TypeIdx>(t)))
        return false;
    for (std::size_t e = 0; e < adj_.size(); ++e)
      if (adj_[e].fwd != o.adj_[e].fwd || adj_[e].rev != o.adj_[e].rev)
        return false;
    return true;
  }

 private:
  void check_id(NodeRef n) const {
    if (n.id >= type_count(n.type))
      throw schema_error("node id " + std::to_string(n.id) +
                         " out of range for type " +
                         schema_.node_types[n.type].name);
  }

  Schema schema_;
  std::vector<Adjacency> adj_;
  std::vector<std::vector<std::uint64_t>> original_ids_;
  std::vector<std::uint64_t> type_offsets_;
};

// ---------------------------------------------------------------------------
// Relation-file loading. One edge per line, "src<TAB>dst", '#' comments.
// Original ids are remapped to dense per-type ids (ascending original order);
// the sidecar map preserves the originals.
// ---------------------------------------------------------------------------

namespace detail {

inline bool parse_edge_line(const std::string& line, std::uint64_t& src,
                            std::uint64_t& dst) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
      ++i;
  };
  auto read_num = [&](std::uint64_t& out) {
    if (i >= line.size() || line[i] < '0' || line[i] > '9') return false;
    out = 0;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9')
      out = out * 10 + static_cast<std::uint64_t>(line[i++] - '0');
    return true;
  };
  skip_ws();
  if (!read_num(src)) return false;
  skip_ws();
  if (!read_num(dst)) return false;
  skip_ws();
  return i == line.size();
}

}  // namespace detail

struct RelationFile {
  std::string edge_type;  // schema edge-type name
  std::string path;
};

inline Hin load_hin(const std::vector<RelationFile>& relation_files,
                    const Schema& schema, LoadReport* report = nullptr) {
  schema.validate();
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  struct RawRelation {
    EdgeIdx edge;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
  };
  std::vector<RawRelation> raw;
  std::vector<std::map<std::uint64_t, NodeId>> id_maps(schema.node_types.size());

  for (const auto& rf : relation_files) {
    const int e = schema.edge_index(rf.edge_type);
    if (e < 0)
      throw schema_error("relation file references undeclared edge type: " +
                         rf.edge_type);
    std::ifstream in(rf.path);
    if (!in) throw error("cannot open relation file: " + rf.path);
    RawRelation rel;
    rel.edge = static_cast<EdgeIdx>(e);
    std::string line;
    std::uint64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::uint64_t s, d;
      if (!detail::parse_edge_line(line, s, d))
        throw parse_error(rf.path + ":" + std::to_string(lineno) +
                          ": malformed edge line: \"" + line + "\"");
      rel.pairs.emplace_back(s, d);
    }
    if (rel.pairs.empty())
      rep.warnings.push_back("relation " + rf.edge_type + " is empty (" +
                             rf.path + ")");
    const auto& et = schema.edge_types[rel.edge];
    for (const auto& [s, d] : rel.pairs) {
      id_maps[et.src_type].emplace(s, 0);
      id_maps[et.dst_type].emplace(d, 0);
    }
    raw.push_back(std::move(rel));
  }

  // Dense remap in ascending original-id order, bounded by declared counts.
  bool any_remap = false;
  for (std::size_t t = 0; t < id_maps.size(); ++t) {
    const auto declared = schema.node_types[t].count;
    if (id_maps[t].size() > declared)
      throw schema_error("type " + schema.node_types[t].name + " has " +
                         std::to_string(id_maps[t].size()) +
                         " distinct ids but schema declares " +
                         std::to_string(declared));
    NodeId next = 0;
    for (auto& [orig, dense] : id_maps[t]) dense = next++;
    if (!id_maps[t].empty() && std::prev(id_maps[t].end())->first !=
                                   id_maps[t].size() - 1)
      any_remap = true;
  }

  Hin hin(schema);
  if (any_remap) {
    for (std::size_t t = 0; t < id_maps.size(); ++t) {
      std::vector<std::uint64_t> orig(id_maps[t].size());
      for (const auto& [o, dense] : id_maps[t]) orig[dense] = o;
      hin.set_original_ids(static_cast<TypeIdx>(t), std::move(orig));
    }
  }

  for (const auto& rel : raw) {
    const auto& et = schema.edge_types[rel.edge];
    for (const auto& [s, d] : rel.pairs)
      hin.add_edge(rel.edge, id_maps[et.src_type].at(s),
                   id_maps[et.dst_type].at(d));
  }
  hin.finalize();
  for (const auto& rel : raw)
    rep.relation_counts.emplace_back(schema.edge_types[rel.edge].name,
                                     hin.edge_count(rel.edge));
  return hin;
}

// Writes a relation back out (original ids via the sidecar), such that
// reloading reproduces the same Hin.
inline void save_relation_file(const Hin& hin, EdgeIdx e,
                               const std::string& path) {
  const auto& et = hin.schema().edge_types[e];
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw error("cannot open for write: " + path);
  const NodeId n_src = hin.type_count(et.src_type);
  for (NodeId s = 0; s < n_src; ++s) {
    for (NodeId d : hin.neighbors({et.src_type, s}, e)) {
      if (et.symmetric && et.src_type == et.dst_type && d < s)
        continue;  // emit each undirected edge once
      out << hin.original_id({et.src_type, s}) << '\t'
          << hin.original_id({et.dst_type, d}) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Meta-paths.
// ---------------------------------------------------------------------------

struct MetaPath {
  std::string label;
  std::vector<TypeIdx> types;   // length m >= 2; user type first, item type last
  std::vector<EdgeIdx> edges;   // length m-1

  std::size_t length() const { return types.size(); }

  // Pattern index for walks longer than the pattern: the pattern is traversed
  // forward then reflected back, so every consecutive pair of the extended
  // walk still crosses one of the declared relation steps.
  std::size_t fold(std::size_t pos) const {
    const std::size_t period = 2 * (types.size() - 1);
    const std::size_t j = pos % period;
    return j < types.size() ? j : period - j;
  }

  TypeIdx type_at(std::size_t pos) const { return types[fold(pos)]; }

  // Relation crossed between walk positions pos and pos+1.
  EdgeIdx edge_at(std::size_t pos) const {
    const std::size_t a = fold(pos), b = fold(pos + 1);
    return edges[std::min(a, b)];
  }

  static MetaPath parse(const Schema& schema, const std::string& spec);

  void validate(const Schema& schema) const {
    if (types.size() < 2) throw schema_error("meta-path needs >= 2 node types");
    if (types.front() != schema.user_type())
      throw schema_error("meta-path " + label + " must start at the user type");
    if (types.back() != schema.item_type())
      throw schema_error("meta-path " + label + " must end at the item type");
    if (edges.size() != types.size() - 1)
      throw schema_error("meta-path " + label + " edge/type length mismatch");
    for (std::size_t i = 0; i + 1 < types.size(); ++i) {
      const auto& e = schema.edge_types[edges[i]];
      const bool fwd = e.src_type == types[i] && e.dst_type == types[i + 1];
      const bool rev = e.dst_type == types[i] && e.src_type == types[i + 1];
      if (!fwd && !rev)
        throw schema_error("meta-path " + label + " step " + std::to_string(i) +
                           " not realizable by relation " + e.name);
    }
  }
};

namespace detail {

inline bool parse_types(const Schema& schema, std::string_view rest,
                        std::vector<TypeIdx>& out) {
  if (rest.empty()) return true;
  // longest-match first so multi-char names like "Ci" win over "C"
  std::vector<std::size_t> order(schema.node_types.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return schema.node_types[a].name.size() > schema.node_types[b].name.size();
  });
  for (std::size_t t : order) {
    const auto& name = schema.node_types[t].name;
    if (rest.substr(0, name.size()) == name) {
      out.push_back(static_cast<TypeIdx>(t));
      if (parse_types(schema, rest.substr(name.size()), out)) return true;
      out.pop_back();
    }
  }
  return false;
}

}  // namespace detail

inline MetaPath MetaPath::parse(const Schema& schema, const std::string& spec) {
  MetaPath mp;
  mp.label = spec;
  if (!detail::parse_types(schema, spec, mp.types))
    throw schema_error("cannot parse meta-path \"" + spec +
                       "\" with the declared node types");
  for (std::size_t i = 0; i + 1 < mp.types.size(); ++i) {
    int found = -1;
    for (std::size_t e = 0; e < schema.edge_types.size(); ++e) {
      const auto& et = schema.edge_types[e];
      const bool fwd = et.src_type == mp.types[i] && et.dst_type == mp.types[i + 1];
      const bool rev = et.dst_type == mp.types[i] && et.src_type == mp.types[i + 1];
      if (fwd || rev) {
        if (found >= 0)
          throw schema_error("meta-path " + spec + " step " + std::to_string(i) +
                             " is ambiguous between relations " +
                             schema.edge_types[found].name + " and " + et.name);
        found = static_cast<int>(e);
      }
    }
    if (found < 0)
      throw schema_error("meta-path " + spec + " step " + std::to_string(i) +
                         " has no connecting relation");
    mp.edges.push_back(static_cast<EdgeIdx>(found));
  }
  mp.validate(schema);
  return mp;
}

// ---------------------------------------------------------------------------
// Leave-one-out split.
// ---------------------------------------------------------------------------

struct InteractionSplit {
  std::vector<std::pair<NodeId, NodeId>> train;
  std::vector<std::pair<NodeId, NodeId>> valid;  // one per evaluable user
  std::vector<std::pair<NodeId, NodeId>> test;   // one per evaluable user
  std::vector<std::uint8_t> user_evaluable;      // indexed by user id
  std::uint64_t seed = 0;
};

// Per user with >= 3 interactions: one test item, one validation item, rest
// train. Users below that keep everything in train and are non-evaluable.
inline InteractionSplit split_leave_one_out(const Hin& hin, std::uint64_t seed) {
  InteractionSplit split;
  split.seed = seed;
  const NodeId n_users = hin.type_count(hin.schema().user_type());
  split.user_evaluable.assign(n_users, 0);
  for (NodeId u = 0; u < n_users; ++u) {
    const auto& items = hin.items_of(u);
    if (items.size() < 3) {
      for (NodeId i : items) split.train.emplace_back(u, i);
      continue;
    }
    rng::Stream rs(rng::derive(seed, "split", u));
    const std::size_t test_idx = rs.index(items.size());
    std::size_t valid_idx = rs.index(items.size() - 1);
    if (valid_idx >= test_idx) ++valid_idx;
    split.user_evaluable[u] = 1;
    split.test.emplace_back(u, items[test_idx]);
    split.valid.emplace_back(u, items[valid_idx]);
    for (std::size_t k = 0; k < items.size(); ++k)
      if (k != test_idx && k != valid_idx) split.train.emplace_back(u, items[k]);
  }
  return split;
}

inline void save_split(const InteractionSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw error("cannot open for write: " + path);
  out << "# seed=" << split.seed << "\n";
  auto dump = [&](const char* tag, const auto& v) {
    for (const auto& [u, i] : v) out << u << '\t' << i << '\t' << tag << '\n';
  };
  dump("train", split.train);
  dump("valid", split.valid);
  dump("test", split.test);
}

inline InteractionSplit load_split(const std::string& path, NodeId n_users) {
  std::ifstream in(path);
  if (!in) throw error("cannot open split file: " + path);
  InteractionSplit split;
  split.user_evaluable.assign(n_users, 0);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("seed=");
      if (pos != std::string::npos)
        split.seed = std::stoull(line.substr(pos + 5));
      continue;
    }
    std::istringstream ss(line);
    NodeId u, i;
    std::string tag;
    if (!(ss >> u >> i >> tag)) throw parse_error("malformed split line: " + line);
    if (tag == "train") {
      split.train.emplace_back(u, i);
    } else if (tag == "valid") {
      split.valid.emplace_back(u, i);
      if (u < n_users) split.user_evaluable[u] = 1;
    } else if (tag == "test") {
      split.test.emplace_back(u, i);
      if (u < n_users) split.user_evaluable[u] = 1;
    } else {
      throw parse_error("unknown split tag: " + tag);
    }
  }
  return split;
}

}  // namespace chest::hin
