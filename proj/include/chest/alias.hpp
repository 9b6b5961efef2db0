#pragma once

#include <cstdint>
#include <vector>

#include "chest/common.hpp"

namespace chest {

// Walker's alias method: O(n) build, O(1) draws from a fixed categorical
// distribution.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(const std::vector<double>& weights) {
    const std::size_t n = weights.size();
    prob_.resize(n);
    alias_.assign(n, 0);
    if (n == 0) return;
    double total = 0;
    for (double w : weights) {
      if (w < 0) throw contract_error("alias table weight must be >= 0");
      total += w;
    }
    if (total <= 0) throw contract_error("alias table needs positive total weight");

    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i)
      scaled[i] = weights[i] * static_cast<double>(n) / total;

    std::vector<std::uint32_t> small, large;
    for (std::size_t i = 0; i < n; ++i)
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));

    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      large.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      (scaled[l] < 1.0 ? small : large).push_back(l);
    }
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;
  }

  bool empty() const { return prob_.empty(); }
  std::size_t size() const { return prob_.size(); }

  std::size_t draw(rng::Stream& rs) const {
    const std::size_t i = rs.index(prob_.size());
    return rs.real() < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

}  // namespace chest
