#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "chest/alias.hpp"
#include "chest/common.hpp"
#include "chest/embed.hpp"
#include "chest/hin.hpp"
#include "chest/io.hpp"

namespace chest::subgraph {

using embed::NodeVectors;
using hin::EdgeIdx;
using hin::Hin;
using hin::MetaPath;
using hin::NodeId;
using hin::NodeRef;
using hin::TypeIdx;

// A concrete path conforming to a meta-path, user first, item last.
struct PathInstance {
  std::vector<NodeRef> nodes;
  std::uint16_t metapath_index = 0;
  double score = 0.0;

  friend bool operator==(const PathInstance& a, const PathInstance& b) {
    return a.nodes == b.nodes && a.metapath_index == b.metapath_index &&
           a.score == b.score;
  }
};

// Highest priority first; exact ties broken by lexicographic node order so
// the sampler and the exhaustive oracle agree on top-K.
inline bool priority_order(const PathInstance& a, const PathInstance& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.nodes < b.nodes;
}

struct HeteroSubgraph {
  NodeRef user;
  NodeRef item;
  std::vector<PathInstance> paths;  // meta-path order, then priority order
  std::vector<NodeRef> nodes;       // deduplicated, sorted
  std::vector<std::pair<NodeRef, NodeRef>> edges;  // directed in walk order
};

struct SeqElement {
  NodeRef node;
  std::uint16_t slot = 0;
  std::vector<std::uint16_t> precursors;  // positions, sorted ascending

  friend bool operator==(const SeqElement&, const SeqElement&) = default;
};

// The subgraph linearized by hop distance from the target user. One element
// per distinct (node, slot) pair; precursor sets encode the edges.
struct MultiSlotSequence {
  std::vector<SeqElement> elements;
  std::uint16_t user_position = 0;
  std::uint16_t item_position = 0;

  std::size_t size() const { return elements.size(); }
  std::uint16_t max_slot() const { return elements[item_position].slot; }

  friend bool operator==(const MultiSlotSequence&,
                         const MultiSlotSequence&) = default;
};

// ---------------------------------------------------------------------------
// Exhaustive enumeration (also the sampler's exhaustive mode). Aborts above
// `cap` DFS expansions or emitted instances.
// ---------------------------------------------------------------------------

inline std::vector<PathInstance> enumerate_paths_exhaustive(
    const Hin& hin, NodeRef u, NodeRef i, const MetaPath& mp,
    const NodeVectors* vectors = nullptr, std::uint64_t cap = 1'000'000,
    std::uint16_t metapath_index = 0) {
  mp.validate(hin.schema());
  const std::size_t m = mp.length();
  std::vector<PathInstance> out;
  std::vector<NodeRef> stack{u};
  std::uint64_t steps = 0;

  auto dfs = [&](auto&& self, std::size_t pos) -> void {
    if (++steps > cap)
      throw overflow_error("exhaustive path enumeration exceeded cap");
    const NodeRef cur = stack.back();
    if (pos + 2 == m) {
      if (hin.has_edge(cur, i.id, mp.edges[pos])) {
        if (out.size() >= cap)
          throw overflow_error("exhaustive path enumeration exceeded cap");
        PathInstance p;
        p.nodes = stack;
        p.nodes.push_back(i);
        p.metapath_index = metapath_index;
        if (vectors) p.score = embed::priority_score(p.nodes, *vectors);
        out.push_back(std::move(p));
      }
      return;
    }
    for (NodeId next : hin.neighbors(cur, mp.edges[pos])) {
      stack.push_back({mp.types[pos + 1], next});
      self(self, pos + 1);
      stack.pop_back();
    }
  };

  if (m == 2) {
    if (hin.has_edge(u, i.id, mp.edges[0])) {
      PathInstance p;
      p.nodes = {u, i};
      p.metapath_index = metapath_index;
      if (vectors) p.score = embed::priority_score(p.nodes, *vectors);
      out.push_back(std::move(p));
    }
  } else {
    dfs(dfs, 0);
  }
  std::sort(out.begin(), out.end(), priority_order);
  return out;
}

// ---------------------------------------------------------------------------
// Priority-guided sampling. Step distribution: probability proportional to
// max(cosine(incoming, candidate), kCosineFloor) over type-valid neighbors,
// drawn from an alias table per (node, relation step) built once. The hop
// before last is restricted to nodes adjacent to the target item, and the
// final hop lands on the item itself.
// ---------------------------------------------------------------------------

inline constexpr double kCosineFloor = 1e-3;

class StepSampler {
 public:
  StepSampler(const Hin& hin, const NodeVectors& vectors,
              const std::vector<MetaPath>& metapaths)
      : hin_(hin), vectors_(vectors) {
    for (const auto& mp : metapaths)
      for (std::size_t j = 0; j + 1 < mp.length(); ++j)
        build(mp.edges[j], mp.types[j]);
  }

  struct PerNode {
    AliasTable alias;
    std::vector<double> weights;  // aligned with hin.neighbors(...) order
  };

  const PerNode& table(EdgeIdx e, NodeRef from) const {
    return tables_.at(key(e, from.type))[from.id];
  }

  // Weighted draw over a filtered subset of the neighbor list. `keep[k]`
  // says whether neighbor k is admissible. Returns -1 when none is.
  static long draw_filtered(const PerNode& t, const std::vector<char>& keep,
                            rng::Stream& rs) {
    double total = 0;
    for (std::size_t k = 0; k < t.weights.size(); ++k)
      if (keep[k]) total += t.weights[k];
    if (total <= 0) return -1;
    double x = rs.real() * total;
    for (std::size_t k = 0; k < t.weights.size(); ++k) {
      if (!keep[k]) continue;
      x -= t.weights[k];
      if (x <= 0) return static_cast<long>(k);
    }
    for (std::size_t k = t.weights.size(); k-- > 0;)
      if (keep[k]) return static_cast<long>(k);
    return -1;
  }

 private:
  static std::uint32_t key(EdgeIdx e, TypeIdx t) {
    return (std::uint32_t(e) << 16) | t;
  }

  void build(EdgeIdx e, TypeIdx from_type) {
    const auto k = key(e, from_type);
    if (tables_.count(k)) return;
    const NodeId n = hin_.type_count(from_type);
    std::vector<PerNode> per(n);
    const auto& et = hin_.schema().edge_types[e];
    const TypeIdx to_type = et.src_type == from_type ? et.dst_type : et.src_type;
    for (NodeId id = 0; id < n; ++id) {
      const NodeRef from{from_type, id};
      const auto& nbrs = hin_.neighbors(from, e);
      if (nbrs.empty()) continue;
      auto& t = per[id];
      t.weights.resize(nbrs.size());
      for (std::size_t j = 0; j < nbrs.size(); ++j)
        t.weights[j] =
            std::max(vectors_.cosine(from, {to_type, nbrs[j]}), kCosineFloor);
      t.alias = AliasTable(t.weights);
    }
    tables_.emplace(k, std::move(per));
  }

  const Hin& hin_;
  const NodeVectors& vectors_;
  std::map<std::uint32_t, std::vector<PerNode>> tables_;
};

struct SampleResult {
  std::vector<PathInstance> selected;  // top-K
  std::vector<PathInstance> pool;      // ranked K+1 .. 4K, for augmentation
};

// pool_multiplier > 0: draw K*pool_multiplier candidate walks. 0 = exhaustive
// mode (the candidate pool is every instance).
inline SampleResult sample_paths_with_pool(
    const Hin& hin, const NodeVectors& vectors, const StepSampler& steps,
    NodeRef u, NodeRef i, const MetaPath& mp, unsigned K,
    unsigned pool_multiplier, std::uint64_t seed,
    std::uint16_t metapath_index = 0, std::uint64_t exhaustive_cap = 1'000'000) {
  if (K < 1) throw contract_error("K must be >= 1");
  const std::size_t m = mp.length();
  std::vector<PathInstance> candidates;

  if (pool_multiplier == 0) {
    candidates = enumerate_paths_exhaustive(hin, u, i, mp, &vectors,
                                            exhaustive_cap, metapath_index);
  } else {
    std::map<std::vector<NodeRef>, double> seen;
    const std::uint64_t mp_tag = fnv1a64(mp.label);
    const unsigned attempts = K * pool_multiplier;
    for (unsigned a = 0; a < attempts; ++a) {
      rng::Stream rs(rng::derive(seed ^ mp_tag, "path-sample", u.id, i.id, a));
      std::vector<NodeRef> nodes{u};
      bool ok = true;
      for (std::size_t j = 0; ok && j + 1 < m; ++j) {
        const NodeRef cur = nodes.back();
        if (j + 2 == m) {
          // final hop must land on the target item
          if (hin.has_edge(cur, i.id, mp.edges[j]))
            nodes.push_back(i);
          else
            ok = false;
        } else if (j + 3 == m) {
          // restrict to nodes adjacent to the target item
          const auto& nbrs = hin.neighbors(cur, mp.edges[j]);
          if (nbrs.empty()) {
            ok = false;
            break;
          }
          const auto& t = steps.table(mp.edges[j], cur);
          std::vector<char> keep(nbrs.size(), 0);
          bool any = false;
          for (std::size_t k = 0; k < nbrs.size(); ++k) {
            keep[k] = hin.has_edge({mp.types[j + 1], nbrs[k]}, i.id,
                                   mp.edges[j + 1]);
            any |= keep[k] != 0;
          }
          if (!any) {
            ok = false;
            break;
          }
          const long k = StepSampler::draw_filtered(t, keep, rs);
          if (k < 0) {
            ok = false;
            break;
          }
          nodes.push_back({mp.types[j + 1], nbrs[static_cast<std::size_t>(k)]});
        } else {
          const auto& nbrs = hin.neighbors(cur, mp.edges[j]);
          if (nbrs.empty()) {
            ok = false;
            break;
          }
          const auto& t = steps.table(mp.edges[j], cur);
          nodes.push_back({mp.types[j + 1], nbrs[t.alias.draw(rs)]});
        }
      }
      if (ok) seen.emplace(std::move(nodes), 0.0);
    }
    candidates.reserve(seen.size());
    for (auto& [nodes, _] : seen) {
      PathInstance p;
      p.nodes = nodes;
      p.metapath_index = metapath_index;
      p.score = embed::priority_score(p.nodes, vectors);
      candidates.push_back(std::move(p));
    }
    std::sort(candidates.begin(), candidates.end(), priority_order);
  }

  SampleResult res;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (k < K)
      res.selected.push_back(std::move(candidates[k]));
    else if (k < static_cast<std::size_t>(K) * 4)
      res.pool.push_back(std::move(candidates[k]));
  }
  return res;
}

inline std::vector<PathInstance> sample_top_k_paths(
    const Hin& hin, const NodeVectors& vectors, const StepSampler& steps,
    NodeRef u, NodeRef i, const MetaPath& mp, unsigned K,
    unsigned pool_multiplier, std::uint64_t seed,
    std::uint16_t metapath_index = 0) {
  return sample_paths_with_pool(hin, vectors, steps, u, i, mp, K,
                                pool_multiplier, seed, metapath_index)
      .selected;
}

// ---------------------------------------------------------------------------
// Merging and multi-slot linearization.
// ---------------------------------------------------------------------------

inline HeteroSubgraph merge_paths(NodeRef u, NodeRef i,
                                  std::vector<PathInstance> paths) {
  HeteroSubgraph g;
  g.user = u;
  g.item = i;
  for (const auto& p : paths) {
    if (p.nodes.size() < 2 || p.nodes.front() != u || p.nodes.back() != i)
      throw contract_error("merge_paths: path endpoints do not match (u, i)");
  }
  std::sort(paths.begin(), paths.end(),
            [](const PathInstance& a, const PathInstance& b) {
              if (a.metapath_index != b.metapath_index)
                return a.metapath_index < b.metapath_index;
              return priority_order(a, b);
            });
  paths.erase(std::unique(paths.begin(), paths.end(),
                          [](const PathInstance& a, const PathInstance& b) {
                            return a.nodes == b.nodes &&
                                   a.metapath_index == b.metapath_index;
                          }),
              paths.end());
  for (const auto& p : paths) {
    for (const auto& n : p.nodes) g.nodes.push_back(n);
    for (std::size_t j = 0; j + 1 < p.nodes.size(); ++j)
      g.edges.emplace_back(p.nodes[j], p.nodes[j + 1]);
  }
  std::sort(g.nodes.begin(), g.nodes.end());
  g.nodes.erase(std::unique(g.nodes.begin(), g.nodes.end()), g.nodes.end());
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.paths = std::move(paths);
  return g;
}

inline MultiSlotSequence to_multislot(const HeteroSubgraph& g) {
  if (g.paths.empty())
    throw contract_error("to_multislot: subgraph has no paths");

  // slot = hop distance from the user along the paths a node lies on; a node
  // occurring at two different slots becomes two elements
  std::map<std::pair<std::uint16_t, NodeRef>, std::size_t> index;
  MultiSlotSequence seq;
  for (const auto& p : g.paths)
    for (std::size_t j = 0; j < p.nodes.size(); ++j) {
      const std::pair<std::uint16_t, NodeRef> key{
          static_cast<std::uint16_t>(j), p.nodes[j]};
      if (index.emplace(key, 0).second) {
        SeqElement el;
        el.node = p.nodes[j];
        el.slot = static_cast<std::uint16_t>(j);
        seq.elements.push_back(std::move(el));
      }
    }
  std::sort(seq.elements.begin(), seq.elements.end(),
            [](const SeqElement& a, const SeqElement& b) {
              if (a.slot != b.slot) return a.slot < b.slot;
              return a.node < b.node;
            });
  for (std::size_t pos = 0; pos < seq.elements.size(); ++pos)
    index[{seq.elements[pos].slot, seq.elements[pos].node}] = pos;

  for (const auto& p : g.paths)
    for (std::size_t j = 0; j + 1 < p.nodes.size(); ++j) {
      const auto from = index.at({static_cast<std::uint16_t>(j), p.nodes[j]});
      const auto to = index.at({static_cast<std::uint16_t>(j + 1), p.nodes[j + 1]});
      seq.elements[to].precursors.push_back(static_cast<std::uint16_t>(from));
    }
  for (auto& el : seq.elements) {
    std::sort(el.precursors.begin(), el.precursors.end());
    el.precursors.erase(std::unique(el.precursors.begin(), el.precursors.end()),
                        el.precursors.end());
  }

  seq.user_position = 0;
  std::uint16_t max_slot = 0;
  for (const auto& el : seq.elements) max_slot = std::max(max_slot, el.slot);
  seq.item_position = static_cast<std::uint16_t>(
      index.at({max_slot, g.item}));
  return seq;
}

// Path-less candidate pairs are scored through a minimal two-element
// sequence: user at slot 0, item at slot 1 preceded by the user.
inline MultiSlotSequence make_fallback_sequence(NodeRef u, NodeRef i) {
  MultiSlotSequence seq;
  seq.elements.resize(2);
  seq.elements[0].node = u;
  seq.elements[0].slot = 0;
  seq.elements[1].node = i;
  seq.elements[1].slot = 1;
  seq.elements[1].precursors = {0};
  seq.user_position = 0;
  seq.item_position = 1;
  return seq;
}

inline MultiSlotSequence sequence_from_paths(NodeRef u, NodeRef i,
                                             std::vector<PathInstance> paths) {
  if (paths.empty()) return make_fallback_sequence(u, i);
  return to_multislot(merge_paths(u, i, std::move(paths)));
}

// ---------------------------------------------------------------------------
// Corpus: keyed store (user, item) -> entry. Entries keep the selected paths
// plus the not-selected candidate pool (insertion material for augmentation)
// and the derived sequence.
// ---------------------------------------------------------------------------

struct CorpusEntry {
  NodeId user = 0;
  NodeId item = 0;
  std::vector<PathInstance> selected;
  std::vector<PathInstance> pool;
  MultiSlotSequence sequence;

  std::vector<std::uint8_t> metapath_labels(std::size_t n_metapaths) const {
    std::vector<std::uint8_t> y(n_metapaths, 0);
    for (const auto& p : selected)
      if (p.metapath_index < n_metapaths) y[p.metapath_index] = 1;
    return y;
  }

  friend bool operator==(const CorpusEntry&, const CorpusEntry&) = default;
};

struct SubgraphCorpus {
  unsigned K = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> metapath_labels;
  std::map<std::pair<NodeId, NodeId>, CorpusEntry> entries;

  friend bool operator==(const SubgraphCorpus&, const SubgraphCorpus&) = default;
};

inline constexpr char kCorpusMagic[8] = {'C', 'H', 'E', 'S', 'T', 'C', 'O', 'R'};
inline constexpr std::uint32_t kCorpusVersion = 1;

namespace detail {

inline void write_path(io::Writer& w, const PathInstance& p) {
  w.u16(p.metapath_index);
  w.f64(p.score);
  w.u16(static_cast<std::uint16_t>(p.nodes.size()));
  for (const auto& n : p.nodes) {
    w.u16(n.type);
    w.u32(n.id);
  }
}

inline PathInstance read_path(io::Reader& r) {
  PathInstance p;
  p.metapath_index = r.u16();
  p.score = r.f64();
  const auto n = r.u16();
  p.nodes.resize(n);
  for (auto& node : p.nodes) {
    node.type = r.u16();
    node.id = r.u32();
  }
  return p;
}

}  // namespace detail

inline void persist_corpus(const SubgraphCorpus& corpus,
                           const std::string& path) {
  std::vector<char> out;
  io::Writer head;
  head.bytes(kCorpusMagic, 8);
  head.u32(kCorpusVersion);
  head.u32(corpus.K);
  head.u64(corpus.seed);
  head.u32(static_cast<std::uint32_t>(corpus.metapath_labels.size()));
  for (const auto& s : corpus.metapath_labels) head.str(s);
  head.u64(corpus.entries.size());
  io::append_block(out, head);

  for (const auto& [key, e] : corpus.entries) {
    io::Writer w;
    w.u32(e.user);
    w.u32(e.item);
    const auto n = static_cast<std::uint16_t>(e.sequence.elements.size());
    w.u16(n);
    w.u16(e.sequence.user_position);
    w.u16(e.sequence.item_position);
    const std::size_t words = (n + 63) / 64;
    for (const auto& el : e.sequence.elements) {
      w.u16(el.node.type);
      w.u32(el.node.id);
      w.u16(el.slot);
      std::vector<std::uint64_t> bitmap(words, 0);
      for (auto p : el.precursors) bitmap[p / 64] |= 1ULL << (p % 64);
      for (auto word : bitmap) w.u64(word);
    }
    w.u16(static_cast<std::uint16_t>(e.selected.size()));
    for (const auto& p : e.selected) detail::write_path(w, p);
    w.u16(static_cast<std::uint16_t>(e.pool.size()));
    for (const auto& p : e.pool) detail::write_path(w, p);
    io::append_block(out, w);
  }
  io::write_file(path, out);
}

inline SubgraphCorpus load_corpus(const std::string& path) {
  const auto buf = io::read_file(path);
  io::Reader outer(buf);
  const auto head_payload = io::read_block(outer);
  io::Reader head(head_payload);
  char magic[8];
  head.bytes(magic, 8);
  if (std::memcmp(magic, kCorpusMagic, 8) != 0)
    throw corrupt_corpus_error("not a corpus file: " + path);
  const auto version = head.u32();
  if (version != kCorpusVersion)
    throw corrupt_corpus_error("unsupported corpus version " +
                               std::to_string(version));
  SubgraphCorpus corpus;
  corpus.K = head.u32();
  corpus.seed = head.u64();
  const auto n_mp = head.u32();
  corpus.metapath_labels.resize(n_mp);
  for (auto& s : corpus.metapath_labels) s = head.str();
  const auto n_entries = head.u64();

  for (std::uint64_t k = 0; k < n_entries; ++k) {
    const auto payload = io::read_block(outer);
    io::Reader r(payload);
    CorpusEntry e;
    e.user = r.u32();
    e.item = r.u32();
    const auto n = r.u16();
    e.sequence.user_position = r.u16();
    e.sequence.item_position = r.u16();
    const std::size_t words = (n + 63) / 64;
    e.sequence.elements.resize(n);
    for (auto& el : e.sequence.elements) {
      el.node.type = r.u16();
      el.node.id = r.u32();
      el.slot = r.u16();
      for (std::size_t wi = 0; wi < words; ++wi) {
        std::uint64_t word = r.u64();
        while (word) {
          const int bit = std::countr_zero(word);
          el.precursors.push_back(static_cast<std::uint16_t>(wi * 64 + bit));
          word &= word - 1;
        }
      }
    }
    const auto n_sel = r.u16();
    e.selected.resize(n_sel);
    for (auto& p : e.selected) p = detail::read_path(r);
    const auto n_pool = r.u16();
    e.pool.resize(n_pool);
    for (auto& p : e.pool) p = detail::read_path(r);
    corpus.entries.emplace(std::make_pair(e.user, e.item), std::move(e));
  }
  if (!outer.eof()) throw corrupt_corpus_error("trailing bytes in corpus file");
  return corpus;
}

// ---------------------------------------------------------------------------
// Provider: builds interaction-specific sequences on demand (sampler +
// cache), seeded from a persisted corpus when available. Single-writer,
// multi-reader.
// ---------------------------------------------------------------------------

struct SamplerConfig {
  unsigned K = 5;
  unsigned pool_multiplier = 4;
  std::uint64_t seed = 0;
};

class SubgraphProvider {
 public:
  SubgraphProvider(const Hin& hin, const NodeVectors& vectors,
                   std::vector<MetaPath> metapaths, SamplerConfig cfg)
      : hin_(hin),
        vectors_(vectors),
        metapaths_(std::move(metapaths)),
        cfg_(cfg),
        steps_(hin, vectors, metapaths_) {}

  const std::vector<MetaPath>& metapaths() const { return metapaths_; }
  const Hin& graph() const { return hin_; }
  const SamplerConfig& config() const { return cfg_; }

  void seed_from_corpus(const SubgraphCorpus& corpus) {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [key, e] : corpus.entries)
      cache_[key] = std::make_shared<CorpusEntry>(e);
  }

  std::shared_ptr<const CorpusEntry> get(NodeId user, NodeId item) const {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find({user, item});
      if (it != cache_.end()) return it->second;
    }
    auto entry = std::make_shared<CorpusEntry>(build(user, item));
    std::lock_guard<std::mutex> lock(mu_);
    auto [it, inserted] = cache_.emplace(std::make_pair(user, item), entry);
    return it->second;
  }

  CorpusEntry build(NodeId user, NodeId item) const {
    CorpusEntry e;
    e.user = user;
    e.item = item;
    const NodeRef u{hin_.schema().user_type(), user};
    const NodeRef i{hin_.schema().item_type(), item};
    for (std::size_t m = 0; m < metapaths_.size(); ++m) {
      auto res = sample_paths_with_pool(hin_, vectors_, steps_, u, i,
                                        metapaths_[m], cfg_.K,
                                        cfg_.pool_multiplier, cfg_.seed,
                                        static_cast<std::uint16_t>(m));
      for (auto& p : res.selected) e.selected.push_back(std::move(p));
      for (auto& p : res.pool) e.pool.push_back(std::move(p));
    }
    e.sequence = sequence_from_paths(u, i, e.selected);
    return e;
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 private:
  const Hin& hin_;
  const NodeVectors& vectors_;
  std::vector<MetaPath> metapaths_;
  SamplerConfig cfg_;
  StepSampler steps_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<NodeId, NodeId>, std::shared_ptr<const CorpusEntry>>
      cache_;
};

}  // namespace chest::subgraph
