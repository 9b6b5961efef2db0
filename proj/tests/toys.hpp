#pragma once

// Shared test fixtures: small hand-built HINs and a random-HIN generator.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "chest/embed.hpp"
#include "chest/hin.hpp"

namespace toys {

using chest::hin::EdgeType;
using chest::hin::Hin;
using chest::hin::NodeId;
using chest::hin::NodeRef;
using chest::hin::NodeType;
using chest::hin::Schema;
using chest::hin::TypeIdx;

// Three-type toy: users u1,u2; items i1..i3; attributes a1,a2 (0-based ids).
// Edges are exactly the ones on the three paths
//   u1-i2-u2-i1 (UIUI), u1-i3-a1-i1 (UIAI), u1-i3-a2-i1 (UIAI),
// plus u2-i2 so u2 has two interactions.
inline Schema attribute_schema() {
  Schema s;
  s.node_types = {{"U", 2}, {"I", 3}, {"A", 2}};
  s.edge_types = {{"UI", 0, 1, false}, {"IA", 1, 2, false}};
  s.interaction_edge = 0;
  return s;
}

inline Hin attribute_toy() {
  Hin hin(attribute_schema());
  // user-item: u1={i2,i3}, u2={i1,i2}
  hin.add_edge(0, 0, 1);
  hin.add_edge(0, 0, 2);
  hin.add_edge(0, 1, 0);
  hin.add_edge(0, 1, 1);
  // item-attribute: i3={a1,a2}, i1={a1,a2}
  hin.add_edge(1, 2, 0);
  hin.add_edge(1, 2, 1);
  hin.add_edge(1, 0, 0);
  hin.add_edge(1, 0, 1);
  hin.finalize();
  return hin;
}

// Unit-norm deterministic vectors for the toy above.
inline chest::embed::NodeVectors toy_vectors(const Hin& hin, unsigned d = 8,
                                             std::uint64_t seed = 7) {
  std::vector<NodeId> counts;
  for (std::size_t t = 0; t < hin.schema().node_types.size(); ++t)
    counts.push_back(hin.type_count(static_cast<TypeIdx>(t)));
  chest::embed::NodeVectors v(counts, d);
  for (std::size_t t = 0; t < counts.size(); ++t)
    for (NodeId i = 0; i < counts[t]; ++i) {
      chest::rng::Stream rs(chest::rng::derive(seed, "toyvec", t, i));
      auto vec = v.vec({static_cast<TypeIdx>(t), i});
      for (auto& x : vec) x = static_cast<float>(rs.real(-1.0, 1.0));
    }
  v.refresh_norms();
  return v;
}

// Random small HIN over types U, I, X with relations UI (interactions),
// IX, and optionally UU. Edge density is tuned so that paths usually exist.
inline Hin random_hin(std::uint64_t seed, NodeId max_per_type = 7) {
  chest::rng::Stream rs(seed);
  const NodeId nu = 2 + static_cast<NodeId>(rs.index(max_per_type - 1));
  const NodeId ni = 2 + static_cast<NodeId>(rs.index(max_per_type - 1));
  const NodeId nx = 1 + static_cast<NodeId>(rs.index(max_per_type));
  Schema s;
  s.node_types = {{"U", nu}, {"I", ni}, {"X", nx}};
  s.edge_types = {{"UI", 0, 1, false}, {"IX", 1, 2, false}};
  s.interaction_edge = 0;
  Hin hin(s);
  for (NodeId u = 0; u < nu; ++u)
    for (NodeId i = 0; i < ni; ++i)
      if (rs.bernoulli(0.45)) hin.add_edge(0, u, i);
  for (NodeId i = 0; i < ni; ++i)
    for (NodeId x = 0; x < nx; ++x)
      if (rs.bernoulli(0.4)) hin.add_edge(1, i, x);
  hin.finalize();
  return hin;
}

inline chest::embed::NodeVectors random_vectors(const Hin& hin,
                                                std::uint64_t seed,
                                                unsigned d = 6) {
  return toy_vectors(hin, d, seed);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("chest-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  out << content;
}

}  // namespace toys
