#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "chest/alias.hpp"
#include "chest/common.hpp"
#include "chest/hin.hpp"
#include "chest/io.hpp"

namespace chest::embed {

using hin::Hin;
using hin::MetaPath;
using hin::NodeId;
using hin::NodeRef;
using hin::TypeIdx;

// A meta-path-guided random walk. Node types follow the generating pattern
// (forward, then reflected when the walk outlives the pattern).
struct Walk {
  std::vector<NodeRef> nodes;
  std::uint16_t metapath_index = 0;

  bool conforms_to(const MetaPath& mp) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].type != mp.type_at(i)) return false;
    return true;
  }
};

// Latent vectors learned for path-priority scoring only.
class NodeVectors {
 public:
  NodeVectors() = default;

  NodeVectors(std::vector<NodeId> type_counts, std::uint32_t d_pre)
      : d_(d_pre), counts_(std::move(type_counts)) {
    data_.resize(counts_.size());
    visited_.resize(counts_.size());
    norms_.resize(counts_.size());
    for (std::size_t t = 0; t < counts_.size(); ++t) {
      data_[t].assign(static_cast<std::size_t>(counts_[t]) * d_, 0.0f);
      visited_[t].assign(counts_[t], 0);
      norms_[t].assign(counts_[t], 0.0);
    }
  }

  std::uint32_t dim() const { return d_; }
  const std::vector<NodeId>& type_counts() const { return counts_; }

  std::span<float> vec(NodeRef n) {
    return {data_[n.type].data() + static_cast<std::size_t>(n.id) * d_, d_};
  }
  std::span<const float> vec(NodeRef n) const {
    return {data_[n.type].data() + static_cast<std::size_t>(n.id) * d_, d_};
  }

  void mark_visited(NodeRef n) { visited_[n.type][n.id] = 1; }
  bool was_visited(NodeRef n) const { return visited_[n.type][n.id] != 0; }

  // Recomputes cached norms; call after any bulk mutation.
  void refresh_norms() {
    for (std::size_t t = 0; t < counts_.size(); ++t)
      for (NodeId i = 0; i < counts_[t]; ++i) {
        double s = 0;
        const float* p = data_[t].data() + static_cast<std::size_t>(i) * d_;
        for (std::uint32_t k = 0; k < d_; ++k) s += double(p[k]) * p[k];
        norms_[t][i] = std::sqrt(s);
      }
  }

  // Cosine similarity; a zero-norm operand yields 0 (flagged via `warned`).
  double cosine(NodeRef a, NodeRef b, bool* warned = nullptr) const {
    const double na = norms_[a.type][a.id], nb = norms_[b.type][b.id];
    if (na == 0.0 || nb == 0.0) {
      if (warned) *warned = true;
      return 0.0;
    }
    const float* pa = data_[a.type].data() + static_cast<std::size_t>(a.id) * d_;
    const float* pb = data_[b.type].data() + static_cast<std::size_t>(b.id) * d_;
    double dot = 0;
    for (std::uint32_t k = 0; k < d_; ++k) dot += double(pa[k]) * pb[k];
    return dot / (na * nb);
  }

  void save(const std::string& path) const;
  static NodeVectors load(const std::string& path);
  void export_text(const std::string& path,
                   const std::vector<std::string>& type_names) const;

 private:
  std::uint32_t d_ = 0;
  std::vector<NodeId> counts_;
  std::vector<std::vector<float>> data_;
  std::vector<std::vector<std::uint8_t>> visited_;
  std::vector<std::vector<double>> norms_;
};

// Mean cosine similarity over consecutive node pairs.
inline double priority_score(std::span<const NodeRef> path,
                             const NodeVectors& vectors,
                             std::uint64_t* zero_norm_warnings = nullptr) {
  if (path.size() < 2) throw contract_error("priority_score needs >= 2 nodes");
  double sum = 0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    bool warned = false;
    sum += vectors.cosine(path[i], path[i + 1], &warned);
    if (warned && zero_norm_warnings) ++*zero_norm_warnings;
  }
  return sum / static_cast<double>(path.size() - 1);
}

// ---------------------------------------------------------------------------
// Walk generation: per user node and per meta-path, `walks_per_node` walks of
// up to `walk_length` nodes, truncating when no type-valid neighbor exists.
// Each walk owns an RNG stream derived from (seed, metapath, start, repeat),
// so the multiset of walks is schedule-independent.
// ---------------------------------------------------------------------------

inline std::vector<Walk> generate_walks(const Hin& hin,
                                        const std::vector<MetaPath>& metapaths,
                                        unsigned walks_per_node,
                                        unsigned walk_length,
                                        std::uint64_t seed) {
  if (walk_length < 2) throw contract_error("walk_length must be >= 2");
  for (const auto& mp : metapaths) mp.validate(hin.schema());
  const TypeIdx user_type = hin.schema().user_type();
  const NodeId n_users = hin.type_count(user_type);

  std::vector<Walk> walks;
  walks.reserve(static_cast<std::size_t>(n_users) * metapaths.size() *
                walks_per_node);
  for (std::size_t m = 0; m < metapaths.size(); ++m) {
    const MetaPath& mp = metapaths[m];
    for (NodeId u = 0; u < n_users; ++u) {
      for (unsigned w = 0; w < walks_per_node; ++w) {
        rng::Stream rs(rng::derive(seed, "walk", m, u, w));
        Walk walk;
        walk.metapath_index = static_cast<std::uint16_t>(m);
        NodeRef cur{user_type, u};
        walk.nodes.push_back(cur);
        for (std::size_t pos = 0; pos + 1 < walk_length; ++pos) {
          const auto& nbrs = hin.neighbors(cur, mp.edge_at(pos));
          if (nbrs.empty()) break;
          cur = {mp.type_at(pos + 1), nbrs[rs.index(nbrs.size())]};
          walk.nodes.push_back(cur);
        }
        walks.push_back(std::move(walk));
      }
    }
  }
  return walks;
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling over the walks (single-writer, bit-exact
// per seed). Negatives are drawn from the in-walk unigram distribution raised
// to the 3/4 power, restricted to the context node's type.
// ---------------------------------------------------------------------------

struct SkipgramConfig {
  std::uint32_t d_pre = 64;
  unsigned window = 2;
  unsigned negatives = 5;
  unsigned epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

struct SkipgramStats {
  std::vector<double> epoch_mean_loss;
  std::uint64_t unvisited_nodes = 0;
};

inline NodeVectors train_skipgram(const Hin& hin, const std::vector<Walk>& walks,
                                  const SkipgramConfig& cfg,
                                  SkipgramStats* stats = nullptr) {
  if (cfg.d_pre < 1) throw contract_error("d_pre must be >= 1");
  const std::size_t n_types = hin.schema().node_types.size();
  std::vector<NodeId> counts(n_types);
  for (std::size_t t = 0; t < n_types; ++t)
    counts[t] = hin.type_count(static_cast<TypeIdx>(t));

  NodeVectors vectors(counts, cfg.d_pre);
  const std::uint32_t d = cfg.d_pre;

  // Seeded per-node init, independent of any iteration order.
  for (std::size_t t = 0; t < n_types; ++t)
    for (NodeId i = 0; i < counts[t]; ++i) {
      rng::Stream rs(rng::derive(cfg.seed, "sgns-init", t, i));
      auto v = vectors.vec({static_cast<TypeIdx>(t), i});
      for (auto& x : v)
        x = static_cast<float>(rs.real(-0.5 / d, 0.5 / d));
    }

  // Context table, zero-initialized as in word2vec.
  std::vector<std::vector<float>> ctx(n_types);
  for (std::size_t t = 0; t < n_types; ++t)
    ctx[t].assign(static_cast<std::size_t>(counts[t]) * d, 0.0f);

  // In-walk frequencies -> per-type noise distributions (freq^0.75).
  std::vector<std::vector<double>> freq(n_types);
  for (std::size_t t = 0; t < n_types; ++t) freq[t].assign(counts[t], 0.0);
  for (const auto& walk : walks) {
    if (walk.nodes.size() < 2) continue;  // truncated stubs carry no pairs
    for (const auto& n : walk.nodes) {
      freq[n.type][n.id] += 1.0;
      vectors.mark_visited(n);
    }
  }
  std::vector<AliasTable> noise(n_types);
  std::vector<std::vector<NodeId>> noise_ids(n_types);
  for (std::size_t t = 0; t < n_types; ++t) {
    std::vector<double> w;
    for (NodeId i = 0; i < counts[t]; ++i)
      if (freq[t][i] > 0) {
        noise_ids[t].push_back(i);
        w.push_back(std::pow(freq[t][i], 0.75));
      }
    if (!w.empty()) noise[t] = AliasTable(w);
  }

  std::uint64_t pairs_per_epoch = 0;
  for (const auto& walk : walks) {
    const std::size_t n = walk.nodes.size();
    if (n < 2) continue;
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t lo = c >= cfg.window ? c - cfg.window : 0;
      const std::size_t hi = std::min(n - 1, c + cfg.window);
      pairs_per_epoch += (hi - lo);  // window minus the center itself
    }
  }

  const std::uint64_t total_pairs =
      pairs_per_epoch * std::max<std::uint64_t>(1, cfg.epochs);
  std::uint64_t processed = 0;
  rng::Stream neg_rs(rng::derive(cfg.seed, "sgns-neg"));
  std::vector<float> grad_center(d);

  auto dot = [d](const float* a, const float* b) {
    double s = 0;
    for (std::uint32_t k = 0; k < d; ++k) s += double(a[k]) * b[k];
    return s;
  };
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  if (stats) stats->epoch_mean_loss.clear();
  for (unsigned epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0;
    std::uint64_t loss_n = 0;
    for (const auto& walk : walks) {
      const std::size_t n = walk.nodes.size();
      if (n < 2) continue;
      for (std::size_t c = 0; c < n; ++c) {
        const NodeRef center = walk.nodes[c];
        float* vc = vectors.vec(center).data();
        const std::size_t lo = c >= cfg.window ? c - cfg.window : 0;
        const std::size_t hi = std::min(n - 1, c + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == c) continue;
          const NodeRef target = walk.nodes[j];
          const double lr =
              cfg.learning_rate *
              std::max(1.0 - double(processed) / double(total_pairs), 1e-4);
          ++processed;
          std::fill(grad_center.begin(), grad_center.end(), 0.0f);
          double pair_loss = 0;
          for (unsigned s = 0; s <= cfg.negatives; ++s) {
            NodeRef out = target;
            double label = 1.0;
            if (s > 0) {
              const auto& ids = noise_ids[target.type];
              if (ids.empty()) continue;
              NodeId cand = ids[noise[target.type].draw(neg_rs)];
              if (cand == target.id && ids.size() > 1) {
                cand = ids[noise[target.type].draw(neg_rs)];
                if (cand == target.id) continue;
              } else if (cand == target.id) {
                continue;
              }
              out = {target.type, cand};
              label = 0.0;
            }
            float* vo = ctx[out.type].data() +
                        static_cast<std::size_t>(out.id) * d;
            const double score = sigmoid(dot(vc, vo));
            pair_loss += label > 0.5 ? -std::log(std::max(score, 1e-12))
                                     : -std::log(std::max(1.0 - score, 1e-12));
            const double g = (label - score) * lr;
            for (std::uint32_t k = 0; k < d; ++k) {
              grad_center[k] += static_cast<float>(g) * vo[k];
              vo[k] += static_cast<float>(g) * vc[k];
            }
          }
          for (std::uint32_t k = 0; k < d; ++k) vc[k] += grad_center[k];
          loss_sum += pair_loss;
          ++loss_n;
        }
      }
    }
    if (stats)
      stats->epoch_mean_loss.push_back(loss_n ? loss_sum / double(loss_n) : 0.0);
  }

  if (stats) {
    stats->unvisited_nodes = 0;
    for (std::size_t t = 0; t < n_types; ++t)
      for (NodeId i = 0; i < counts[t]; ++i)
        if (!vectors.was_visited({static_cast<TypeIdx>(t), i}))
          ++stats->unvisited_nodes;
  }
  vectors.refresh_norms();
  return vectors;
}

// ---------------------------------------------------------------------------
// Persistence: header (magic, version, d_pre, per-type counts), visited
// bitmaps, then row-major 32-bit floats, all CRC-checked.
// ---------------------------------------------------------------------------

inline constexpr char kVectorsMagic[8] = {'C', 'H', 'E', 'S', 'T', 'V', 'E', 'C'};

inline void NodeVectors::save(const std::string& path) const {
  io::Writer w;
  w.bytes(kVectorsMagic, 8);
  w.u32(1);  // version
  w.u32(d_);
  w.u32(static_cast<std::uint32_t>(counts_.size()));
  for (auto c : counts_) w.u32(c);
  for (std::size_t t = 0; t < counts_.size(); ++t)
    for (NodeId i = 0; i < counts_[t]; ++i) w.u8(visited_[t][i]);
  for (std::size_t t = 0; t < counts_.size(); ++t)
    w.f32s(data_[t].data(), data_[t].size());
  std::vector<char> out;
  io::append_block(out, w);
  io::write_file(path, out);
}

inline NodeVectors NodeVectors::load(const std::string& path) {
  const auto buf = io::read_file(path);
  io::Reader outer(buf);
  const auto payload = io::read_block(outer);
  io::Reader r(payload);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kVectorsMagic, 8) != 0)
    throw corrupt_corpus_error("not a node-vectors file: " + path);
  const auto version = r.u32();
  if (version != 1)
    throw corrupt_corpus_error("unsupported node-vectors version " +
                               std::to_string(version));
  const auto d = r.u32();
  const auto n_types = r.u32();
  std::vector<NodeId> counts(n_types);
  for (auto& c : counts) c = r.u32();
  NodeVectors v(counts, d);
  for (std::size_t t = 0; t < n_types; ++t)
    for (NodeId i = 0; i < counts[t]; ++i)
      v.visited_[t][i] = r.u8();
  for (std::size_t t = 0; t < n_types; ++t)
    r.f32s(v.data_[t].data(), v.data_[t].size());
  v.refresh_norms();
  return v;
}

inline void NodeVectors::export_text(
    const std::string& path, const std::vector<std::string>& type_names) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw error("cannot open for write: " + path);
  for (std::size_t t = 0; t < counts_.size(); ++t)
    for (NodeId i = 0; i < counts_[t]; ++i) {
      out << type_names[t] << '\t' << i;
      const float* p = data_[t].data() + static_cast<std::size_t>(i) * d_;
      for (std::uint32_t k = 0; k < d_; ++k) out << ' ' << p[k];
      out << '\n';
    }
}

}  // namespace chest::embed
