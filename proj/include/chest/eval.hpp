#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "chest/common.hpp"
#include "chest/hin.hpp"
#include "chest/model.hpp"
#include "chest/subgraph.hpp"

namespace chest::eval {

using hin::NodeId;

struct CandidateList {
  NodeId user = 0;
  NodeId ground_truth = 0;
  std::vector<NodeId> negatives;
  bool capped = false;  // fewer never-interacted items than requested
};

// One list per evaluable user: the held-out item plus `n_neg` items the user
// never interacted with, fixed per (user, seed).
inline std::vector<CandidateList> build_candidates(
    const hin::Hin& hin, const std::vector<std::pair<NodeId, NodeId>>& held_out,
    unsigned n_neg, std::uint64_t seed) {
  const NodeId n_items = hin.type_count(hin.schema().item_type());
  std::vector<CandidateList> lists;
  lists.reserve(held_out.size());
  for (const auto& [u, gt] : held_out) {
    CandidateList cand;
    cand.user = u;
    cand.ground_truth = gt;
    const auto& owned = hin.items_of(u);
    std::vector<NodeId> complement;
    complement.reserve(n_items - owned.size());
    for (NodeId i = 0; i < n_items; ++i)
      if (!std::binary_search(owned.begin(), owned.end(), i))
        complement.push_back(i);
    rng::Stream rs(rng::derive(seed, "candidates", u));
    for (std::size_t k = complement.size(); k > 1; --k)
      std::swap(complement[k - 1], complement[rs.index(k)]);
    if (complement.size() <= n_neg) {
      cand.capped = complement.size() < n_neg;
      cand.negatives = std::move(complement);
    } else {
      cand.negatives.assign(complement.begin(), complement.begin() + n_neg);
    }
    std::sort(cand.negatives.begin(), cand.negatives.end());
    lists.push_back(std::move(cand));
  }
  return lists;
}

// Scores one (user, item) candidate through the model; pairs without any
// connecting path fall back to the minimal two-element sequence.
inline float score_pair(const model::ModelParams<float>& params,
                        const subgraph::SubgraphProvider& provider,
                        const model::TypeOffsets& offsets, NodeId user,
                        NodeId item) {
  const auto entry = provider.build(user, item);
  const auto in = model::Input::from(entry.sequence, offsets);
  const auto trace = model::encode(in, params);
  const auto zt =
      model::subgraph_representation(trace, in.user_pos, in.item_pos, params);
  return model::interaction_score(zt.z, params);
}

// Candidates sorted by score descending, ties broken by ascending item id.
inline std::vector<NodeId> rank_candidates(
    const model::ModelParams<float>& params,
    const subgraph::SubgraphProvider& provider,
    const model::TypeOffsets& offsets, const CandidateList& cand) {
  std::vector<std::pair<float, NodeId>> scored;
  scored.reserve(cand.negatives.size() + 1);
  scored.emplace_back(
      score_pair(params, provider, offsets, cand.user, cand.ground_truth),
      cand.ground_truth);
  for (NodeId i : cand.negatives)
    scored.emplace_back(score_pair(params, provider, offsets, cand.user, i), i);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<NodeId> out;
  out.reserve(scored.size());
  for (const auto& [s, i] : scored) out.push_back(i);
  return out;
}

inline double hit_rate_at_k(const std::vector<std::vector<NodeId>>& rankings,
                            const std::vector<NodeId>& ground_truths,
                            unsigned k) {
  if (k < 1) throw contract_error("k must be >= 1");
  if (rankings.size() != ground_truths.size())
    throw contract_error("rankings/ground truth size mismatch");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    const auto& r = rankings[u];
    const std::size_t top = std::min<std::size_t>(k, r.size());
    for (std::size_t j = 0; j < top; ++j)
      if (r[j] == ground_truths[u]) {
        ++hits;
        break;
      }
  }
  return double(hits) / double(rankings.size());
}

// Single ground truth per user: iDCG = 1, DCG = 1/log2(rank+2).
inline double ndcg_at_k(const std::vector<std::vector<NodeId>>& rankings,
                        const std::vector<NodeId>& ground_truths, unsigned k) {
  if (k < 1) throw contract_error("k must be >= 1");
  if (rankings.size() != ground_truths.size())
    throw contract_error("rankings/ground truth size mismatch");
  if (rankings.empty()) return 0.0;
  double sum = 0;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    const auto& r = rankings[u];
    const std::size_t top = std::min<std::size_t>(k, r.size());
    for (std::size_t j = 0; j < top; ++j)
      if (r[j] == ground_truths[u]) {
        sum += 1.0 / std::log2(double(j) + 2.0);
        break;
      }
  }
  return sum / double(rankings.size());
}

struct MetricsReport {
  std::vector<unsigned> cutoffs;
  std::vector<double> hr;    // aligned with cutoffs
  std::vector<double> ndcg;  // aligned with cutoffs
  std::size_t users = 0;
  std::size_t capped_lists = 0;
  std::uint64_t config_hash = 0;

  double hr_at(unsigned k) const { return at(hr, k); }
  double ndcg_at(unsigned k) const { return at(ndcg, k); }

 private:
  double at(const std::vector<double>& v, unsigned k) const {
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
      if (cutoffs[i] == k) return v[i];
    throw contract_error("cutoff " + std::to_string(k) + " not evaluated");
  }
};

inline MetricsReport evaluate(const model::ModelParams<float>& params,
                              const subgraph::SubgraphProvider& provider,
                              const std::vector<std::pair<NodeId, NodeId>>&
                                  held_out,
                              const std::vector<unsigned>& cutoffs,
                              unsigned n_neg, std::uint64_t seed,
                              unsigned threads = 0,
                              std::uint64_t config_hash = 0) {
  const model::TypeOffsets offsets(provider.graph());
  const auto lists = build_candidates(provider.graph(), held_out, n_neg, seed);
  std::vector<std::vector<NodeId>> rankings(lists.size());
  std::vector<NodeId> gts(lists.size());
  parallel_chunks(lists.size(), threads ? threads : default_threads(),
                  [&](std::size_t lo, std::size_t hi, unsigned) {
                    for (std::size_t k = lo; k < hi; ++k) {
                      rankings[k] =
                          rank_candidates(params, provider, offsets, lists[k]);
                      gts[k] = lists[k].ground_truth;
                    }
                  });
  MetricsReport rep;
  rep.cutoffs = cutoffs;
  rep.users = lists.size();
  rep.config_hash = config_hash;
  for (const auto& l : lists) rep.capped_lists += l.capped ? 1 : 0;
  for (unsigned k : cutoffs) {
    rep.hr.push_back(hit_rate_at_k(rankings, gts, k));
    rep.ndcg.push_back(ndcg_at_k(rankings, gts, k));
  }
  return rep;
}

// CSV row: dataset, run id, HR@10, NDCG@10, HR@20, NDCG@20, users, hash.
inline std::string metrics_csv_header() {
  return "dataset,run_id,hr@10,ndcg@10,hr@20,ndcg@20,users,config_hash";
}

inline std::string metrics_csv_row(const MetricsReport& rep,
                                   const std::string& dataset,
                                   const std::string& run_id) {
  std::ostringstream ss;
  ss << dataset << ',' << run_id << ',' << std::setprecision(10);
  ss << rep.hr_at(10) << ',' << rep.ndcg_at(10) << ',' << rep.hr_at(20) << ','
     << rep.ndcg_at(20) << ',' << rep.users << ',' << std::hex << std::setw(16)
     << std::setfill('0') << rep.config_hash;
  return ss.str();
}

inline std::string metrics_table(const MetricsReport& rep) {
  std::ostringstream ss;
  ss << "  cutoff        HR      NDCG\n";
  for (std::size_t i = 0; i < rep.cutoffs.size(); ++i) {
    ss << "  @" << std::left << std::setw(6) << rep.cutoffs[i] << std::right
       << std::fixed << std::setprecision(4) << std::setw(8) << rep.hr[i]
       << std::setw(10) << rep.ndcg[i] << "\n";
  }
  ss << "  users: " << rep.users;
  if (rep.capped_lists)
    ss << "  (" << rep.capped_lists << " candidate lists capped)";
  ss << "\n";
  return ss.str();
}

}  // namespace chest::eval
