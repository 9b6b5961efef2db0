// Acceptance suite: one pass/fail line per criterion. Exit 0 iff all pass.
//
//   1  gradient correctness per objective (finite differences, 64-bit)
//   2  sampler equivalence against the exhaustive oracle
//   3  metric oracle + random-scorer Monte Carlo
//   4  closed-form loss checks (SCL / MTP / REC)
//   5  masking statistics
//   6  Fig-style toy subgraph structure
//   7* desk-scale MovieLens reproduction  -> acceptance_desk_scale binary
//   8* ablation ordering on MovieLens     -> acceptance_desk_scale binary

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "chest/chest.hpp"
#include "model_fixtures.hpp"
#include "synthetic.hpp"
#include "toys.hpp"

using namespace chest;
using curriculum::Objective;
using curriculum::ObjectiveKind;
using model::Input;
using model::TypeOffsets;

namespace {

struct Suite {
  int failures = 0;

  void criterion(const std::string& name, const std::function<bool(std::string&)>& fn) {
    std::string detail;
    bool ok = false;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ok = fn(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    std::printf("[%s] %s (%.0f ms)%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
                ms, detail.empty() ? "" : " -- ", detail.c_str());
    if (!ok) ++failures;
  }
};

TypeOffsets offsets_for(const model::ModelDims& dims) {
  return TypeOffsets(fixtures::small_type_counts(dims));
}

Objective objective_for(ObjectiveKind kind, const model::ModelDims& dims,
                        std::uint64_t seed) {
  Objective obj;
  obj.kind = kind;
  switch (kind) {
    case ObjectiveKind::mnp: {
      auto in = fixtures::random_input(dims, 6, seed);
      auto masked = curriculum::mask_nodes(in, 0.4, seed, offsets_for(dims));
      obj.input = masked->first;
      obj.mask = masked->second;
      break;
    }
    case ObjectiveKind::mep: {
      auto in = fixtures::random_input(dims, 6, seed);
      auto masked = curriculum::mask_edges(in, 0.5, seed);
      obj.input = masked->first;
      obj.mask = masked->second;
      break;
    }
    case ObjectiveKind::mtp: {
      obj.input = fixtures::random_input(dims, 6, seed);
      obj.mtp_labels.assign(dims.n_metapaths, 0);
      obj.mtp_labels[0] = 1;
      break;
    }
    case ObjectiveKind::scl: {
      obj.input = fixtures::random_input(dims, 6, seed);
      obj.scl_positive = fixtures::random_input(dims, 5, seed + 1);
      obj.scl_negatives = {fixtures::random_input(dims, 6, seed + 2),
                           fixtures::random_input(dims, 4, seed + 3)};
      obj.tau = 1.0;
      break;
    }
    case ObjectiveKind::rec: {
      obj.input = fixtures::random_input(dims, 6, seed);
      obj.rec_negative = fixtures::random_input(dims, 5, seed + 1);
      break;
    }
    case ObjectiveKind::elementary:
      break;
  }
  return obj;
}

// --- criterion 1 -----------------------------------------------------------

bool check_gradients(std::string& detail) {
  auto dims = fixtures::small_dims(8, 1, 2);  // d=8, L=1, h=2; inputs n=6
  std::ostringstream report;
  bool ok = true;
  const std::vector<std::pair<std::string, ObjectiveKind>> objectives = {
      {"MNP", ObjectiveKind::mnp},
      {"MEP", ObjectiveKind::mep},
      {"MTP", ObjectiveKind::mtp},
      {"SCL", ObjectiveKind::scl},
      {"REC", ObjectiveKind::rec}};
  for (const auto& [name, kind] : objectives) {
    auto params = model::init_params<double>(dims, 1000 + std::size_t(kind));
    auto obj = objective_for(kind, dims, 2000 + std::size_t(kind));
    const double err = curriculum::finite_difference_check(params, obj, 1e-4);
    report << name << "=" << err << " ";
    ok = ok && err < 1e-4;
  }
  detail = report.str();
  return ok;
}

// --- criterion 2 -----------------------------------------------------------

bool check_sampler_oracle(std::string& detail) {
  std::size_t pairs_checked = 0, nonempty = 0;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) {
    auto hin = toys::random_hin(seed * 101, 6);  // <= 18 nodes
    auto vectors = toys::random_vectors(hin, seed);
    std::vector<hin::MetaPath> mps = {
        hin::MetaPath::parse(hin.schema(), "UIUI"),
        hin::MetaPath::parse(hin.schema(), "UIXI")};
    subgraph::StepSampler steps(hin, vectors, mps);
    const unsigned K = 3;
    for (std::uint16_t m = 0; m < mps.size(); ++m)
      for (hin::NodeId u = 0; u < hin.type_count(0); ++u)
        for (hin::NodeId i = 0; i < hin.type_count(1); ++i) {
          const hin::NodeRef un{0, u}, in{1, i};
          auto oracle = subgraph::enumerate_paths_exhaustive(
              hin, un, in, mps[m], &vectors, 100000, m);
          auto exhaustive = subgraph::sample_top_k_paths(
              hin, vectors, steps, un, in, mps[m], K, 0, seed, m);
          if (exhaustive.size() !=
              std::min<std::size_t>(K, oracle.size())) {
            detail = "top-K size mismatch";
            return false;
          }
          for (std::size_t k = 0; k < exhaustive.size(); ++k)
            if (exhaustive[k].nodes != oracle[k].nodes) {
              detail = "top-K order mismatch";
              return false;
            }
          std::set<std::vector<hin::NodeRef>> members;
          for (const auto& p : oracle) members.insert(p.nodes);
          auto sampled = subgraph::sample_top_k_paths(
              hin, vectors, steps, un, in, mps[m], K, 4, seed, m);
          for (const auto& p : sampled)
            if (!members.count(p.nodes)) {
              detail = "sampled path outside the exhaustive instance set";
              return false;
            }
          ++pairs_checked;
          nonempty += oracle.empty() ? 0 : 1;
        }
  }
  std::ostringstream ss;
  ss << pairs_checked << " (u,i,mp) cases on 24 graphs, " << nonempty
     << " with instances";
  detail = ss.str();
  return nonempty > 100;
}

// --- criterion 3 -----------------------------------------------------------

bool check_metric_oracle(std::string& detail) {
  // brute-force recomputation on 1000 random rankings
  rng::Stream rs(424242);
  const std::size_t users = 1000, items = 50;
  std::vector<std::vector<hin::NodeId>> rankings(users);
  std::vector<hin::NodeId> gts(users);
  for (std::size_t u = 0; u < users; ++u) {
    std::vector<hin::NodeId> order(items);
    for (std::size_t i = 0; i < items; ++i) order[i] = hin::NodeId(i);
    for (std::size_t i = items; i > 1; --i)
      std::swap(order[i - 1], order[rs.index(i)]);
    rankings[u] = order;
    gts[u] = hin::NodeId(rs.index(items));
  }
  for (unsigned k : {1u, 5u, 10u, 20u, 50u}) {
    double hr_brute = 0, ndcg_brute = 0;
    for (std::size_t u = 0; u < users; ++u) {
      for (std::size_t j = 0; j < items; ++j)
        if (rankings[u][j] == gts[u]) {
          if (j < k) {
            hr_brute += 1;
            ndcg_brute += 1.0 / std::log2(double(j) + 2.0);
          }
          break;
        }
    }
    hr_brute /= double(users);
    ndcg_brute /= double(users);
    if (std::abs(eval::hit_rate_at_k(rankings, gts, k) - hr_brute) > 1e-12 ||
        std::abs(eval::ndcg_at_k(rankings, gts, k) - ndcg_brute) > 1e-12) {
      detail = "mismatch vs brute force at k=" + std::to_string(k);
      return false;
    }
  }

  // Monte Carlo: a random scorer over 1000 negatives converges to 10/1001
  const std::size_t mc_users = 10000;
  const std::size_t cands = 1001;
  std::size_t hits = 0;
  rng::Stream mc(777);
  for (std::size_t u = 0; u < mc_users; ++u) {
    // a uniformly random ranking puts the ground truth at a uniform rank
    if (mc.index(cands) < 10) ++hits;
  }
  const double hr = double(hits) / double(mc_users);
  const double expect = 10.0 / 1001.0;
  std::ostringstream ss;
  ss << "random-scorer HR@10 = " << hr << " vs " << expect;
  detail = ss.str();
  return std::abs(hr - expect) <= 0.003;
}

// --- criterion 4 -----------------------------------------------------------

bool check_loss_closed_forms(std::string& detail) {
  using model::Vec;
  Vec<double> x(4);
  x << 0.4, -1.0, 2.0, 0.25;

  for (double tau : {0.5, 1.0, 2.0}) {
    const unsigned n_neg = 4;
    std::vector<Vec<double>> negs(n_neg, Vec<double>(2.0 * x));
    const double got =
        curriculum::loss_scl_value(x, Vec<double>(0.5 * x), negs, tau);
    if (std::abs(got - std::log(1.0 + n_neg)) > 1e-6) {
      detail = "SCL uniform-similarity mismatch at tau=" + std::to_string(tau);
      return false;
    }
  }

  // MTP at 0.5 predictions through the model head: |P| ln 2
  auto dims = fixtures::small_dims(8, 1, 2);
  dims.n_metapaths = 4;
  auto params = model::init_params<double>(dims, 31);
  params.mtp_w.setZero();
  auto obj = objective_for(ObjectiveKind::mtp, dims, 32);
  obj.mtp_labels = {1, 0, 1, 0};
  const auto parts = curriculum::evaluate_objective<double>(params, obj, nullptr);
  if (std::abs(parts.mtp - 4 * std::log(2.0)) > 1e-6) {
    detail = "MTP |P| ln2 mismatch";
    return false;
  }

  // REC at 0.5/0.5: closed form and through an all-zero model
  if (std::abs(curriculum::loss_rec_value(0.5, 0.5) - 2 * std::log(2.0)) >
      1e-6) {
    detail = "REC closed form mismatch";
    return false;
  }
  auto zero_params = model::make_params<double>(dims);
  auto rec = objective_for(ObjectiveKind::rec, dims, 33);
  const auto rec_parts =
      curriculum::evaluate_objective<double>(zero_params, rec, nullptr);
  if (std::abs(rec_parts.rec - 2 * std::log(2.0)) > 1e-6) {
    detail = "REC through a zero model is not 2 ln 2";
    return false;
  }
  detail = "SCL(tau 0.5/1/2), MTP |P|=4, REC";
  return true;
}

// --- criterion 5 -----------------------------------------------------------

bool check_mask_statistics(std::string& detail) {
  model::ModelDims dims;
  dims.n_nodes = 60;
  dims.n_types = 3;
  dims.n_slots = 34;
  dims.n_max = 40;
  dims.d = 8;
  dims.d_ff = 16;
  dims.layers = 1;
  dims.heads = 2;
  dims.n_metapaths = 2;
  const TypeOffsets offsets(std::vector<hin::NodeId>(3, 20));

  std::uint64_t node_maskable = 0, node_masked = 0;
  std::uint64_t links = 0, links_masked = 0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    auto in = fixtures::random_input(dims, 32, 900 + s);
    auto nm = curriculum::mask_nodes(in, 0.4, s, offsets);
    if (nm) {
      for (std::size_t t = 0; t < in.size(); ++t)
        if (in.node[t] != in.node[in.user_pos] &&
            in.node[t] != in.node[in.item_pos])
          ++node_maskable;
      node_masked += nm->second.node_positions.size();
    }
    auto em = curriculum::mask_edges(in, 0.2, s);
    if (em) {
      for (const auto& prec : in.precursors) links += prec.size();
      links_masked += em->second.edges.size();
    }
  }
  const double node_rate = double(node_masked) / double(node_maskable);
  const double edge_rate = double(links_masked) / double(links);
  std::ostringstream ss;
  ss << "node rate " << node_rate << " (n=" << node_maskable << "), edge rate "
     << edge_rate << " (n=" << links << ")";
  detail = ss.str();
  return node_maskable >= 10000 && links >= 10000 &&
         std::abs(node_rate - 0.4) <= 0.02 && std::abs(edge_rate - 0.2) <= 0.02;
}

// --- criterion 6 -----------------------------------------------------------

bool check_toy_structure(std::string& detail) {
  auto hin = toys::attribute_toy();
  auto vectors = toys::toy_vectors(hin);
  const hin::NodeRef u1{0, 0}, i1{1, 0};
  auto uiui = subgraph::enumerate_paths_exhaustive(
      hin, u1, i1, hin::MetaPath::parse(hin.schema(), "UIUI"), &vectors, 1000,
      0);
  auto uiai = subgraph::enumerate_paths_exhaustive(
      hin, u1, i1, hin::MetaPath::parse(hin.schema(), "UIAI"), &vectors, 1000,
      1);
  std::vector<subgraph::PathInstance> all = uiui;
  all.insert(all.end(), uiai.begin(), uiai.end());
  if (all.size() != 3) {
    detail = "expected the 3 hand-derived paths";
    return false;
  }
  auto g = subgraph::merge_paths(u1, i1, all);
  auto seq = subgraph::to_multislot(g);
  const auto& item = seq.elements[seq.item_position];
  std::ostringstream ss;
  ss << g.nodes.size() << " nodes, " << g.edges.size() << " directed edges, "
     << item.precursors.size() << " item precursors";
  detail = ss.str();
  return g.nodes.size() == 7 && g.edges.size() == 8 &&
         item.precursors.size() == 3 && item.node == i1;
}

// --- supporting integration check ------------------------------------------

bool check_planted_learning(std::string& detail) {
  toys::TempDir data_dir("acc-synth");
  toys::TempDir out_dir("acc-out");
  synthetic::Spec spec;
  synthetic::write_dataset(data_dir.path(), spec);
  auto doc = nlohmann::json::parse(
      synthetic::small_config(data_dir.path() / "schema.json", 77));
  auto cfg = pipeline::RunConfig::from_json(doc);
  pipeline::RunManifest manifest(out_dir.path().string());
  std::ostringstream sink;
  pipeline::StageRunner runner(manifest, cfg, sink);
  runner.run("all");

  std::ifstream csv(manifest.artifact("metrics.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  // dataset,run_id,hr@10,...
  std::stringstream ss(row);
  std::string field;
  std::getline(ss, field, ',');
  std::getline(ss, field, ',');
  std::getline(ss, field, ',');
  const double hr10 = std::stod(field);
  const double random_hr = 10.0 / 31.0;  // 30 negatives + ground truth
  std::ostringstream d;
  d << "HR@10 " << hr10 << " vs random " << random_hr;
  detail = d.str();
  return hr10 >= 1.4 * random_hr;
}

}  // namespace

int main() {
  Suite suite;
  suite.criterion(
      "criterion 1: gradient correctness (finite differences < 1e-4)",
      check_gradients);
  suite.criterion("criterion 2: sampler equals the exhaustive oracle",
                  check_sampler_oracle);
  suite.criterion("criterion 3: metric oracle and random-scorer Monte Carlo",
                  check_metric_oracle);
  suite.criterion("criterion 4: closed-form loss checks", check_loss_closed_forms);
  suite.criterion("criterion 5: masking statistics (0.4 / 0.2 within 0.02)",
                  check_mask_statistics);
  suite.criterion("criterion 6: toy-graph structural invariants",
                  check_toy_structure);
  suite.criterion(
      "integration: planted-structure pipeline beats a random ranker",
      check_planted_learning);
  if (suite.failures) {
    std::printf("%d criterion(s) FAILED\n", suite.failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
