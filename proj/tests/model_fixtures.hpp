#pragma once

// Model-shaped fixtures shared by the model/curriculum tests and the
// acceptance suite: a small dims preset and random inputs.

#include <cstdint>
#include <vector>

#include "chest/model.hpp"

namespace fixtures {

using chest::model::Input;
using chest::model::ModelDims;

inline ModelDims small_dims(std::uint32_t d = 8, std::uint32_t layers = 1,
                            std::uint32_t heads = 2) {
  ModelDims dims;
  dims.n_nodes = 12;
  dims.n_types = 3;
  dims.n_slots = 6;
  dims.n_max = 8;
  dims.d = d;
  dims.d_ff = 2 * d;
  dims.layers = layers;
  dims.heads = heads;
  dims.n_metapaths = 2;
  return dims;
}

// A plausible n-element multi-slot input: user at position 0 (slot 0), item
// last (max slot), interior nodes chained by precursor links.
inline Input random_input(const ModelDims& dims, std::size_t n,
                          std::uint64_t seed) {
  chest::rng::Stream rs(seed);
  Input in;
  in.node.resize(n);
  in.type.resize(n);
  in.slot.resize(n);
  in.precursors.resize(n);
  in.id_masked.assign(n, 0);
  const std::size_t max_slot = std::min<std::size_t>(n - 1, dims.n_slots - 1);
  const std::uint32_t per_type = dims.n_nodes / dims.n_types;
  for (std::size_t t = 0; t < n; ++t) {
    // node ids live inside their type's block of the global id space
    in.type[t] = static_cast<std::uint16_t>(rs.index(dims.n_types));
    in.node[t] = static_cast<std::uint32_t>(in.type[t] * per_type +
                                            rs.index(per_type));
    in.slot[t] = static_cast<std::uint16_t>(
        t == 0 ? 0 : (t == n - 1 ? max_slot : 1 + rs.index(max_slot)));
    if (t > 0) {
      // at least one precursor from a strictly earlier position
      in.precursors[t].push_back(static_cast<std::uint16_t>(rs.index(t)));
      if (t > 1 && rs.bernoulli(0.4))
        in.precursors[t].push_back(static_cast<std::uint16_t>(rs.index(t - 1)));
      std::sort(in.precursors[t].begin(), in.precursors[t].end());
      in.precursors[t].erase(
          std::unique(in.precursors[t].begin(), in.precursors[t].end()),
          in.precursors[t].end());
    }
  }
  // distinct user/item nodes so masking can exclude both
  in.type[0] = 0;
  in.node[0] = 0;
  in.type[n - 1] = 1;
  in.node[n - 1] = per_type;
  in.user_pos = 0;
  in.item_pos = static_cast<std::uint16_t>(n - 1);
  return in;
}

// Type counts matching small_dims' global id layout.
inline std::vector<chest::hin::NodeId> small_type_counts(const ModelDims& dims) {
  return std::vector<chest::hin::NodeId>(dims.n_types,
                                         dims.n_nodes / dims.n_types);
}

}  // namespace fixtures
