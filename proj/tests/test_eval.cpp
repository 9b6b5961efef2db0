#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "chest/eval.hpp"
#include "toys.hpp"

using namespace chest;
using namespace chest::eval;
using chest::hin::NodeId;
using Catch::Matchers::WithinAbs;

namespace {

// Brute-force metric oracle, written against the raw definitions.
double brute_hr(const std::vector<std::vector<NodeId>>& rankings,
                const std::vector<NodeId>& gts, unsigned k) {
  double hits = 0;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    std::size_t rank = rankings[u].size();
    for (std::size_t j = 0; j < rankings[u].size(); ++j)
      if (rankings[u][j] == gts[u]) rank = j;
    if (rank < k) hits += 1;
  }
  return hits / double(rankings.size());
}

double brute_ndcg(const std::vector<std::vector<NodeId>>& rankings,
                  const std::vector<NodeId>& gts, unsigned k) {
  double total = 0;
  for (std::size_t u = 0; u < rankings.size(); ++u) {
    double dcg = 0;
    for (std::size_t j = 0; j < std::min<std::size_t>(k, rankings[u].size());
         ++j)
      if (rankings[u][j] == gts[u]) dcg += 1.0 / std::log2(j + 2.0);
    total += dcg;  // iDCG = 1 for a single relevant item
  }
  return total / double(rankings.size());
}

std::vector<std::vector<NodeId>> random_rankings(std::size_t users,
                                                 std::size_t items,
                                                 std::uint64_t seed,
                                                 std::vector<NodeId>& gts) {
  rng::Stream rs(seed);
  std::vector<std::vector<NodeId>> rankings(users);
  gts.resize(users);
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<NodeId> items_list(items);
    for (std::size_t i = 0; i < items; ++i)
      items_list[i] = static_cast<NodeId>(i);
    for (std::size_t i = items; i > 1; --i)
      std::swap(items_list[i - 1], items_list[rs.index(i)]);
    rankings[u] = items_list;
    gts[u] = static_cast<NodeId>(rs.index(items));
  }
  return rankings;
}

}  // namespace

TEST_CASE("candidate lists exclude interacted items and are seed-stable") {
  auto hin = toys::attribute_toy();
  // user 0 interacted with items 1,2; held-out item 1
  std::vector<std::pair<NodeId, NodeId>> held = {{0, 1}};
  auto lists = build_candidates(hin, held, 2, 5);
  REQUIRE(lists.size() == 1);
  const auto& cand = lists[0];
  CHECK(cand.ground_truth == 1);
  // only item 0 is non-interacted for user 0 -> capped below 2
  CHECK(cand.negatives == std::vector<NodeId>{0});
  CHECK(cand.capped);

  auto again = build_candidates(hin, held, 2, 5);
  CHECK(again[0].negatives == cand.negatives);
}

TEST_CASE("user who interacted with everything gets an empty, capped list") {
  hin::Schema s;
  s.node_types = {{"U", 1}, {"I", 3}};
  s.edge_types = {{"UI", 0, 1, false}};
  s.interaction_edge = 0;
  hin::Hin hin(s);
  for (NodeId i = 0; i < 3; ++i) hin.add_edge(0, 0, i);
  hin.finalize();
  auto lists = build_candidates(hin, {{0, 2}}, 5, 1);
  CHECK(lists[0].negatives.empty());
  CHECK(lists[0].capped);
}

TEST_CASE("metric closed forms") {
  std::vector<std::vector<NodeId>> rankings = {
      {7, 1, 2, 3, 4, 5, 6, 0, 8, 9, 10, 11}};
  std::vector<NodeId> gts = {7};

  SECTION("hit at rank 1") {
    CHECK(hit_rate_at_k(rankings, gts, 10) == 1.0);
    CHECK_THAT(ndcg_at_k(rankings, gts, 10), WithinAbs(1.0, 1e-12));
  }

  SECTION("hit at rank 3 scores 1/log2(4)") {
    gts = {2};
    CHECK_THAT(ndcg_at_k(rankings, gts, 10), WithinAbs(0.5, 1e-12));
  }

  SECTION("miss beyond the cutoff") {
    gts = {11};  // rank 12
    CHECK(hit_rate_at_k(rankings, gts, 10) == 0.0);
    CHECK(ndcg_at_k(rankings, gts, 10) == 0.0);
  }

  SECTION("hits at ranks 1,5,12,30 with k=10 give HR 0.5") {
    std::vector<std::vector<NodeId>> rs;
    std::vector<NodeId> g;
    for (std::size_t rank : {1, 5, 12, 30}) {
      std::vector<NodeId> r(40);
      for (std::size_t j = 0; j < 40; ++j) r[j] = static_cast<NodeId>(j + 1);
      r[rank - 1] = 0;
      rs.push_back(r);
      g.push_back(0);
    }
    CHECK(hit_rate_at_k(rs, g, 10) == 0.5);
  }
}

TEST_CASE("metrics match the brute-force oracle on 1000 random rankings") {
  std::vector<NodeId> gts;
  auto rankings = random_rankings(1000, 40, 2024, gts);
  for (unsigned k : {1u, 5u, 10u, 20u}) {
    CHECK_THAT(hit_rate_at_k(rankings, gts, k),
               WithinAbs(brute_hr(rankings, gts, k), 1e-12));
    CHECK_THAT(ndcg_at_k(rankings, gts, k),
               WithinAbs(brute_ndcg(rankings, gts, k), 1e-12));
  }
}

TEST_CASE("metric monotonicity and ordering invariants") {
  std::vector<NodeId> gts;
  auto rankings = random_rankings(300, 25, 77, gts);
  double prev_hr = 0, prev_ndcg = 0;
  for (unsigned k = 1; k <= 25; ++k) {
    const double hr = hit_rate_at_k(rankings, gts, k);
    const double nd = ndcg_at_k(rankings, gts, k);
    CHECK(hr >= prev_hr);
    CHECK(nd >= prev_ndcg);
    CHECK(nd <= hr + 1e-12);  // single ground truth
    CHECK(nd <= 1.0);
    prev_hr = hr;
    prev_ndcg = nd;
  }
}

TEST_CASE("ranking sorts by score with item-id tie-break") {
  auto hin = toys::attribute_toy();
  auto vectors = toys::toy_vectors(hin);
  std::vector<hin::MetaPath> mps = {hin::MetaPath::parse(hin.schema(), "UIUI"),
                                    hin::MetaPath::parse(hin.schema(), "UIAI")};
  subgraph::SamplerConfig scfg;
  scfg.K = 2;
  scfg.seed = 4;
  subgraph::SubgraphProvider provider(hin, vectors, mps, scfg);
  model::TypeOffsets offsets(hin);

  model::ModelDims dims;
  dims.n_nodes = static_cast<std::uint32_t>(hin.total_nodes());
  dims.n_types = 3;
  dims.n_slots = 6;
  dims.n_max = 24;
  dims.d = 8;
  dims.d_ff = 16;
  dims.layers = 1;
  dims.heads = 2;
  dims.n_metapaths = 2;

  SECTION("zero model scores everything 0.5 and ties break by id") {
    auto params = model::make_params<float>(dims);
    CandidateList cand;
    cand.user = 0;
    cand.ground_truth = 2;
    cand.negatives = {0};
    auto ranked = rank_candidates(params, provider, offsets, cand);
    CHECK(ranked == std::vector<NodeId>{0, 2});
  }

  SECTION("every candidate gets a score even without connecting paths") {
    auto params = model::init_params<float>(dims, 3);
    CandidateList cand;
    cand.user = 0;
    cand.ground_truth = 0;  // u0 has no path to i1? build falls back if needed
    cand.negatives = {1, 2};
    auto ranked = rank_candidates(params, provider, offsets, cand);
    CHECK(ranked.size() == 3);
    std::set<NodeId> seen(ranked.begin(), ranked.end());
    CHECK(seen == std::set<NodeId>{0, 1, 2});
  }

  SECTION("evaluate produces a consistent report") {
    auto params = model::init_params<float>(dims, 6);
    std::vector<std::pair<NodeId, NodeId>> held = {{0, 1}, {1, 0}};
    auto rep = evaluate(params, provider, held, {1, 2}, 2, 9, 1, 0xfeed);
    CHECK(rep.users == 2);
    CHECK(rep.cutoffs == std::vector<unsigned>{1, 2});
    CHECK(rep.hr_at(1) <= rep.hr_at(2));
    CHECK(rep.config_hash == 0xfeed);

    auto rep2 = evaluate(params, provider, held, {1, 2}, 2, 9, 2, 0xfeed);
    CHECK(rep2.hr == rep.hr);  // thread count does not change results
    CHECK(rep2.ndcg == rep.ndcg);
  }
}

TEST_CASE("metrics serialize to a stable CSV row") {
  MetricsReport rep;
  rep.cutoffs = {10, 20};
  rep.hr = {0.25, 0.5};
  rep.ndcg = {0.125, 0.25};
  rep.users = 42;
  rep.config_hash = 0xdeadbeef;
  const std::string row = metrics_csv_row(rep, "toy", "run-1");
  CHECK(row == metrics_csv_row(rep, "toy", "run-1"));
  CHECK(row.find("toy,run-1,") == 0);
  CHECK(row.find("42") != std::string::npos);
  CHECK(metrics_csv_header().find("hr@10") != std::string::npos);
  CHECK_THROWS_AS(rep.hr_at(5), contract_error);
}
