#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chest/common.hpp"
#include "chest/model.hpp"
#include "chest/subgraph.hpp"

namespace chest::curriculum {

using model::ActivationTrace;
using model::Gradients;
using model::Input;
using model::Mat;
using model::ModelParams;
using model::TypeOffsets;
using model::Vec;

inline constexpr std::uint16_t kNoNegative = 0xffff;
inline constexpr double kLiteralClampEps = 1e-8;

// ---------------------------------------------------------------------------
// Masking. Node masks replace the ID embedding term; edge masks remove
// precursor links from the input. Both leave the user and item positions
// untouched.
// ---------------------------------------------------------------------------

struct MaskSpec {
  std::vector<std::uint16_t> node_positions;
  std::vector<std::uint32_t> node_true;       // global ids of the masked nodes
  std::vector<std::uint32_t> node_negatives;  // same-type negatives, global ids
  std::vector<std::pair<std::uint16_t, std::uint16_t>> edges;  // (prec, succ)
  std::vector<std::uint16_t> edge_negatives;  // position k' (kNoNegative = none)

  bool has_nodes() const { return !node_positions.empty(); }
  bool has_edges() const { return !edges.empty(); }
};

namespace detail {

inline bool is_endpoint(const Input& in, std::size_t t) {
  return in.node[t] == in.node[in.user_pos] || in.node[t] == in.node[in.item_pos];
}

}  // namespace detail

// Masks each non-endpoint position independently with probability `prob`,
// redrawing until at least one is masked. Returns nothing when the sequence
// has no maskable position (skip-sample).
inline std::optional<std::pair<Input, MaskSpec>> mask_nodes(
    const Input& in, double prob, std::uint64_t seed,
    const TypeOffsets& offsets) {
  if (prob <= 0 || prob >= 1) throw contract_error("mask prob must be in (0,1)");
  std::vector<std::uint16_t> maskable;
  for (std::size_t t = 0; t < in.size(); ++t)
    if (!detail::is_endpoint(in, t))
      maskable.push_back(static_cast<std::uint16_t>(t));
  if (maskable.empty()) return std::nullopt;

  rng::Stream rs(rng::derive(seed, "mask-nodes"));
  MaskSpec spec;
  for (int attempt = 0; attempt < 64 && spec.node_positions.empty(); ++attempt) {
    for (auto t : maskable)
      if (rs.bernoulli(prob)) spec.node_positions.push_back(t);
  }
  if (spec.node_positions.empty())
    spec.node_positions.push_back(maskable[rs.index(maskable.size())]);

  Input masked = in;
  for (auto t : spec.node_positions) {
    masked.id_masked[t] = 1;
    const std::uint32_t global = in.node[t];
    const auto type = in.type[t];
    const std::uint64_t base = offsets.off[type];
    const std::uint64_t count = offsets.off[type + 1] - base;
    spec.node_true.push_back(global);
    if (count < 2) {
      spec.node_negatives.push_back(global);  // degenerate type, self-negative
      continue;
    }
    const std::uint64_t local = global - base;
    std::uint64_t neg = rs.index(count - 1);
    if (neg >= local) ++neg;
    spec.node_negatives.push_back(static_cast<std::uint32_t>(base + neg));
  }
  return std::make_pair(std::move(masked), std::move(spec));
}

// Masks each precursor link independently with probability `prob` (removing
// it from the input). Per masked edge <j,k> one negative position k' is drawn
// from same-sequence positions not adjacent to j; edges with no candidate
// keep kNoNegative and drop out of the loss.
inline std::optional<std::pair<Input, MaskSpec>> mask_edges(
    const Input& in, double prob, std::uint64_t seed) {
  if (prob <= 0 || prob >= 1) throw contract_error("mask prob must be in (0,1)");
  std::vector<std::pair<std::uint16_t, std::uint16_t>> links;
  for (std::size_t t = 0; t < in.size(); ++t)
    for (auto p : in.precursors[t])
      links.emplace_back(p, static_cast<std::uint16_t>(t));
  if (links.empty()) return std::nullopt;

  rng::Stream rs(rng::derive(seed, "mask-edges"));
  MaskSpec spec;
  for (const auto& link : links)
    if (rs.bernoulli(prob)) spec.edges.push_back(link);

  Input masked = in;
  for (const auto& [p, t] : spec.edges) {
    auto& prec = masked.precursors[t];
    prec.erase(std::remove(prec.begin(), prec.end(), p), prec.end());
  }
  for (const auto& [j, k] : spec.edges) {
    std::vector<std::uint16_t> candidates;
    for (std::size_t q = 0; q < in.size(); ++q) {
      if (q == j) continue;
      const auto qq = static_cast<std::uint16_t>(q);
      const bool adj =
          std::find(in.precursors[q].begin(), in.precursors[q].end(), j) !=
              in.precursors[q].end() ||
          std::find(in.precursors[j].begin(), in.precursors[j].end(), qq) !=
              in.precursors[j].end();
      if (!adj) candidates.push_back(qq);
    }
    spec.edge_negatives.push_back(
        candidates.empty()
            ? kNoNegative
            : candidates[rs.index(candidates.size())]);
  }
  return std::make_pair(std::move(masked), std::move(spec));
}

// ---------------------------------------------------------------------------
// Path-based subgraph augmentation.
// ---------------------------------------------------------------------------

enum class AugmentStrategy { removal, insertion, substitution };

struct AugmentOutcome {
  std::vector<subgraph::PathInstance> paths;
  bool flagged = false;  // degenerate fallback happened (see spec of each case)
};

inline AugmentOutcome augment_paths(
    const std::vector<subgraph::PathInstance>& paths, AugmentStrategy strategy,
    double ratio, const std::vector<subgraph::PathInstance>& pool,
    std::uint64_t seed) {
  if (ratio <= 0 || ratio >= 1) throw contract_error("ratio must be in (0,1)");
  if (paths.empty()) throw contract_error("cannot augment an empty path set");
  rng::Stream rs(rng::derive(seed, "augment"));
  const std::size_t n = paths.size();
  const auto want = static_cast<std::size_t>(std::ceil(ratio * double(n)));

  AugmentOutcome out;
  auto pick_indices = [&rs](std::size_t total, std::size_t count) {
    std::vector<std::size_t> idx(total);
    for (std::size_t k = 0; k < total; ++k) idx[k] = k;
    for (std::size_t k = total; k > 1; --k)
      std::swap(idx[k - 1], idx[rs.index(k)]);
    idx.resize(std::min(count, total));
    return idx;
  };

  auto remove_some = [&](std::size_t count) {
    count = std::min(count, n - 1);  // never remove all
    if (count == 0) out.flagged = true;
    auto drop = pick_indices(n, count);
    std::vector<char> dead(n, 0);
    for (auto k : drop) dead[k] = 1;
    std::vector<subgraph::PathInstance> kept;
    for (std::size_t k = 0; k < n; ++k)
      if (!dead[k]) kept.push_back(paths[k]);
    return kept;
  };
  auto insert_some = [&](std::vector<subgraph::PathInstance> base,
                         std::size_t count) {
    auto take = pick_indices(pool.size(), count);
    for (auto k : take) base.push_back(pool[k]);
    return base;
  };

  switch (strategy) {
    case AugmentStrategy::removal:
      out.paths = remove_some(want);
      break;
    case AugmentStrategy::insertion:
      if (pool.empty()) {
        out.paths = remove_some(want);  // documented fallback
        out.flagged = true;
      } else {
        out.paths = insert_some(paths, want);
      }
      break;
    case AugmentStrategy::substitution: {
      const std::size_t count = std::min(want, n - 1);
      if (count == 0) out.flagged = true;
      out.paths = insert_some(remove_some(count), count);
      break;
    }
  }
  return out;
}

inline subgraph::HeteroSubgraph augment_subgraph(
    const subgraph::HeteroSubgraph& g, AugmentStrategy strategy, double ratio,
    const std::vector<subgraph::PathInstance>& pool, std::uint64_t seed,
    bool* flagged = nullptr) {
  AugmentOutcome out = augment_paths(g.paths, strategy, ratio, pool, seed);
  if (flagged) *flagged = out.flagged;
  return subgraph::merge_paths(g.user, g.item, std::move(out.paths));
}

// ---------------------------------------------------------------------------
// Loss values on raw quantities (closed-form checkable).
// ---------------------------------------------------------------------------

template <class S>
S cosine(const Vec<S>& a, const Vec<S>& b, bool* warned = nullptr) {
  const S na = a.norm(), nb = b.norm();
  if (na == S(0) || nb == S(0)) {
    if (warned) *warned = true;
    return S(0);
  }
  return a.dot(b) / (na * nb);
}

template <class S>
S loss_scl_value(const Vec<S>& anchor, const Vec<S>& positive,
                 const std::vector<Vec<S>>& negatives, double tau) {
  if (tau <= 0) throw contract_error("tau must be positive");
  if (negatives.empty()) throw contract_error("SCL needs >= 1 negative");
  std::vector<S> logits;
  logits.push_back(cosine(anchor, positive) / S(tau));
  for (const auto& n : negatives) logits.push_back(cosine(anchor, n) / S(tau));
  const S mx = *std::max_element(logits.begin(), logits.end());
  S denom = 0;
  for (S l : logits) denom += std::exp(l - mx);
  return -(logits[0] - mx) + std::log(denom);
}

inline double loss_rec_value(double score_pos, double score_neg) {
  if (score_pos <= 0 || score_pos >= 1 || score_neg <= 0 || score_neg >= 1)
    throw contract_error("rec scores must lie strictly inside (0,1)");
  return -std::log(score_pos) - std::log(1.0 - score_neg);
}

// ---------------------------------------------------------------------------
// Objectives: the unit consumed by loss_and_gradients.
// ---------------------------------------------------------------------------

enum class ObjectiveKind { mnp, mep, mtp, scl, rec, elementary };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::mnp;
  Input input;                           // masked input / anchor / positive pair
  MaskSpec mask;                         // mnp / mep / elementary
  std::vector<std::uint8_t> mtp_labels;  // mtp / elementary
  Input scl_positive;                    // scl
  std::vector<Input> scl_negatives;      // scl
  Input rec_negative;                    // rec
  double tau = 1.0;
  double w_mnp = 1.0, w_mep = 1.0, w_mtp = 1.0;  // elementary weights
  double w_scl = 1.0;                            // multi-task weighting
  bool mnp_literal = false;
};

struct LossParts {
  double total = 0;
  double mnp = 0, mep = 0, mtp = 0, scl = 0, rec = 0;
  std::size_t n_mnp = 0, n_mep = 0, n_mtp = 0, n_scl = 0, n_rec = 0;
  std::uint64_t zero_norm_warnings = 0;

  void add(const LossParts& o) {
    total += o.total;
    mnp += o.mnp;
    mep += o.mep;
    mtp += o.mtp;
    scl += o.scl;
    rec += o.rec;
    n_mnp += o.n_mnp;
    n_mep += o.n_mep;
    n_mtp += o.n_mtp;
    n_scl += o.n_scl;
    n_rec += o.n_rec;
    zero_norm_warnings += o.zero_norm_warnings;
  }
};

// The two readings of the masked-prediction objectives: the default pairwise
// form -ln sigma(s+ - s-), and the literal difference-of-sigmoids with a
// positive clamp.
template <class S>
struct RankLoss {
  S loss, dsp, dsn;
};

template <class S>
RankLoss<S> pairwise_rank_loss(S sp, S sn) {
  const S delta = sp - sn;
  RankLoss<S> out;
  out.loss = model::softplus_neg(delta);
  out.dsp = model::sigmoid(delta) - S(1);
  out.dsn = -out.dsp;
  return out;
}

template <class S>
RankLoss<S> literal_rank_loss(S sp, S sn) {
  RankLoss<S> out{S(0), S(0), S(0)};
  const S diff = model::sigmoid(sp) - model::sigmoid(sn);
  if (diff > S(kLiteralClampEps)) {
    out.loss = -std::log(diff);
    const S inv = S(1) / diff;
    out.dsp = -model::sigmoid(sp) * (S(1) - model::sigmoid(sp)) * inv;
    out.dsn = model::sigmoid(sn) * (S(1) - model::sigmoid(sn)) * inv;
  } else {
    out.loss = -std::log(S(kLiteralClampEps));
  }
  return out;
}

namespace detail {

// MNP over one trace: mean over masked positions of the pairwise (default) or
// literal-clamped form of the masked-node objective.
template <class S>
double mnp_part(const Objective& obj, const ModelParams<S>& p,
                const ActivationTrace<S>& trace, Mat<S>* df, Gradients<S>* g,
                double weight) {
  const auto& f = trace.final_states();
  const auto& spec = obj.mask;
  if (spec.node_positions.empty()) return 0.0;
  const double inv_m = 1.0 / double(spec.node_positions.size());
  double loss = 0;
  for (std::size_t idx = 0; idx < spec.node_positions.size(); ++idx) {
    const auto t = spec.node_positions[idx];
    const auto vp = spec.node_true[idx];
    const auto vn = spec.node_negatives[idx];
    const Vec<S> ft = f.row(t).transpose();
    const Vec<S> ep = p.node_id.row(vp).transpose();
    const Vec<S> en = p.node_id.row(vn).transpose();
    const Vec<S> wep = p.wn * ep;
    const Vec<S> wen = p.wn * en;
    const S sp = ft.dot(wep);
    const S sn = ft.dot(wen);
    const RankLoss<S> rl = obj.mnp_literal ? literal_rank_loss(sp, sn)
                                           : pairwise_rank_loss(sp, sn);
    loss += double(rl.loss);
    if (g && df) {
      const S cp = S(weight * inv_m) * rl.dsp;
      const S cn = S(weight * inv_m) * rl.dsn;
      df->row(t) += (cp * wep + cn * wen).transpose();
      g->wn.noalias() += ft * (cp * ep + cn * en).transpose();
      g->node_id.row(vp) += (cp * (p.wn.transpose() * ft)).transpose();
      g->node_id.row(vn) += (cn * (p.wn.transpose() * ft)).transpose();
    }
  }
  return loss * inv_m;
}

template <class S>
double mep_part(const Objective& obj, const ModelParams<S>& p,
                const ActivationTrace<S>& trace, Mat<S>* df, Gradients<S>* g,
                double weight) {
  const auto& f = trace.final_states();
  const auto& spec = obj.mask;
  std::size_t valid = 0;
  for (auto k : spec.edge_negatives)
    if (k != kNoNegative) ++valid;
  if (valid == 0) return 0.0;
  const double inv_m = 1.0 / double(valid);
  double loss = 0;
  for (std::size_t idx = 0; idx < spec.edges.size(); ++idx) {
    if (spec.edge_negatives[idx] == kNoNegative) continue;
    const auto [j, k] = spec.edges[idx];
    const auto kn = spec.edge_negatives[idx];
    const Vec<S> fj = f.row(j).transpose();
    const Vec<S> fk = f.row(k).transpose();
    const Vec<S> fn = f.row(kn).transpose();
    const S sp = fj.dot(p.we * fk);
    const S sn = fj.dot(p.we * fn);
    const RankLoss<S> rl = obj.mnp_literal ? literal_rank_loss(sp, sn)
                                           : pairwise_rank_loss(sp, sn);
    loss += double(rl.loss);
    if (g && df) {
      const S cp = S(weight * inv_m) * rl.dsp;
      const S cn = S(weight * inv_m) * rl.dsn;
      df->row(j) += (cp * (p.we * fk) + cn * (p.we * fn)).transpose();
      df->row(k) += (cp * (p.we.transpose() * fj)).transpose();
      df->row(kn) += (cn * (p.we.transpose() * fj)).transpose();
      g->we.noalias() += cp * fj * fk.transpose();
      g->we.noalias() += cn * fj * fn.transpose();
    }
  }
  return loss * inv_m;
}

// Multi-label BCE over meta-path presence (summed over labels, Eq. form).
template <class S>
double mtp_part(const Objective& obj, const ModelParams<S>& p,
                const model::ZTrace<S>& zt, Vec<S>* dz, Gradients<S>* g,
                double weight) {
  if (obj.mtp_labels.size() != static_cast<std::size_t>(p.mtp_w.rows()))
    throw contract_error("MTP label count must equal |P|");
  const Vec<S> logits = p.mtp_w * zt.z;
  double loss = 0;
  Vec<S> dlogit(logits.size());
  for (Eigen::Index r = 0; r < logits.size(); ++r) {
    const S y = S(obj.mtp_labels[r]);
    const S l = logits(r);
    // y*softplus(-l) + (1-y)*softplus(l)
    loss += double(y * model::softplus_neg(l) +
                   (S(1) - y) * model::softplus_neg(-l));
    dlogit(r) = model::sigmoid(l) - y;
  }
  if (g && dz) {
    dlogit *= S(weight);
    g->mtp_w.noalias() += dlogit * zt.z.transpose();
    dz->noalias() += p.mtp_w.transpose() * dlogit;
  }
  return loss;
}

template <class S>
void cosine_backward(const Vec<S>& a, const Vec<S>& b, S dcos, Vec<S>& da,
                     Vec<S>& db) {
  const S na = a.norm(), nb = b.norm();
  if (na == S(0) || nb == S(0)) return;
  const S dot = a.dot(b);
  da += dcos * (b / (na * nb) - (dot / (na * na * na * nb)) * a);
  db += dcos * (a / (na * nb) - (dot / (na * nb * nb * nb)) * b);
}

}  // namespace detail

// Evaluates one objective; when `grads` is given, accumulates exact
// reverse-mode gradients of the item's total loss into it.
template <class S>
LossParts evaluate_objective(const ModelParams<S>& p, const Objective& obj,
                             Gradients<S>* grads) {
  LossParts parts;
  switch (obj.kind) {
    case ObjectiveKind::mnp:
    case ObjectiveKind::mep:
    case ObjectiveKind::mtp:
    case ObjectiveKind::elementary: {
      const auto trace = model::encode(obj.input, p);
      Mat<S> df = Mat<S>::Zero(trace.final_states().rows(), p.dims.d);
      Vec<S> dz = Vec<S>::Zero(p.dims.d);
      model::ZTrace<S> zt;
      const bool use_z = obj.kind == ObjectiveKind::mtp ||
                         obj.kind == ObjectiveKind::elementary;
      if (use_z)
        zt = model::subgraph_representation(trace, obj.input.user_pos,
                                            obj.input.item_pos, p);
      const double wn = obj.kind == ObjectiveKind::elementary ? obj.w_mnp : 1.0;
      const double we = obj.kind == ObjectiveKind::elementary ? obj.w_mep : 1.0;
      const double wt = obj.kind == ObjectiveKind::elementary ? obj.w_mtp : 1.0;
      if (obj.kind == ObjectiveKind::mnp || obj.kind == ObjectiveKind::elementary)
        if (obj.mask.has_nodes()) {
          parts.mnp = detail::mnp_part(obj, p, trace, grads ? &df : nullptr,
                                       grads, wn);
          parts.n_mnp = 1;
          parts.total += wn * parts.mnp;
        }
      if (obj.kind == ObjectiveKind::mep || obj.kind == ObjectiveKind::elementary)
        if (obj.mask.has_edges()) {
          parts.mep = detail::mep_part(obj, p, trace, grads ? &df : nullptr,
                                       grads, we);
          parts.n_mep = 1;
          parts.total += we * parts.mep;
        }
      if (use_z) {
        parts.mtp = detail::mtp_part(obj, p, zt, grads ? &dz : nullptr, grads,
                                     wt);
        parts.n_mtp = 1;
        parts.total += wt * parts.mtp;
      }
      if (grads) {
        if (use_z)
          model::backward_representation(zt, dz, obj.input.user_pos,
                                         obj.input.item_pos, p, *grads, df);
        model::backward_encoder(obj.input, p, trace, std::move(df), *grads);
      }
      break;
    }
    case ObjectiveKind::scl: {
      if (obj.scl_negatives.empty())
        throw contract_error("SCL needs >= 1 negative");
      if (obj.tau <= 0) throw contract_error("tau must be positive");
      const auto a_trace = model::encode(obj.input, p);
      const auto p_trace = model::encode(obj.scl_positive, p);
      auto a_z = model::subgraph_representation(a_trace, obj.input.user_pos,
                                                obj.input.item_pos, p);
      auto p_z = model::subgraph_representation(
          p_trace, obj.scl_positive.user_pos, obj.scl_positive.item_pos, p);
      std::vector<ActivationTrace<S>> n_traces;
      std::vector<model::ZTrace<S>> n_zs;
      for (const auto& neg : obj.scl_negatives) {
        n_traces.push_back(model::encode(neg, p));
        n_zs.push_back(model::subgraph_representation(
            n_traces.back(), neg.user_pos, neg.item_pos, p));
      }
      const S tau = S(obj.tau);
      std::vector<S> logits;
      bool warned = false;
      logits.push_back(cosine(a_z.z, p_z.z, &warned) / tau);
      for (const auto& nz : n_zs)
        logits.push_back(cosine(a_z.z, nz.z, &warned) / tau);
      if (warned) parts.zero_norm_warnings += 1;
      const S mx = *std::max_element(logits.begin(), logits.end());
      S denom = 0;
      for (S l : logits) denom += std::exp(l - mx);
      const double loss = double(-(logits[0] - mx) + std::log(denom));
      parts.scl = loss;
      parts.n_scl = 1;
      parts.total += obj.w_scl * loss;
      if (grads) {
        // d loss / d logit_k = q_k - [k == 0]
        const S w = S(obj.w_scl);
        std::vector<S> q(logits.size());
        for (std::size_t k = 0; k < logits.size(); ++k)
          q[k] = std::exp(logits[k] - mx) / denom;
        Vec<S> da = Vec<S>::Zero(p.dims.d);
        Vec<S> dp = Vec<S>::Zero(p.dims.d);
        detail::cosine_backward(a_z.z, p_z.z, w * (q[0] - S(1)) / tau, da, dp);
        std::vector<Vec<S>> dns(n_zs.size(), Vec<S>::Zero(p.dims.d));
        for (std::size_t k = 0; k < n_zs.size(); ++k)
          detail::cosine_backward(a_z.z, n_zs[k].z, w * q[k + 1] / tau, da,
                                  dns[k]);

        Mat<S> df_a = Mat<S>::Zero(a_trace.final_states().rows(), p.dims.d);
        model::backward_representation(a_z, da, obj.input.user_pos,
                                       obj.input.item_pos, p, *grads, df_a);
        model::backward_encoder(obj.input, p, a_trace, std::move(df_a), *grads);

        Mat<S> df_p = Mat<S>::Zero(p_trace.final_states().rows(), p.dims.d);
        model::backward_representation(p_z, dp, obj.scl_positive.user_pos,
                                       obj.scl_positive.item_pos, p, *grads,
                                       df_p);
        model::backward_encoder(obj.scl_positive, p, p_trace, std::move(df_p),
                                *grads);
        for (std::size_t k = 0; k < n_zs.size(); ++k) {
          Mat<S> df_n =
              Mat<S>::Zero(n_traces[k].final_states().rows(), p.dims.d);
          model::backward_representation(
              n_zs[k], dns[k], obj.scl_negatives[k].user_pos,
              obj.scl_negatives[k].item_pos, p, *grads, df_n);
          model::backward_encoder(obj.scl_negatives[k], p, n_traces[k],
                                  std::move(df_n), *grads);
        }
      }
      break;
    }
    case ObjectiveKind::rec: {
      const auto pos_trace = model::encode(obj.input, p);
      const auto neg_trace = model::encode(obj.rec_negative, p);
      auto pos_z = model::subgraph_representation(pos_trace, obj.input.user_pos,
                                                  obj.input.item_pos, p);
      auto neg_z = model::subgraph_representation(
          neg_trace, obj.rec_negative.user_pos, obj.rec_negative.item_pos, p);
      const S lp = model::score_logit(pos_z.z, p);
      const S ln = model::score_logit(neg_z.z, p);
      const double loss =
          double(model::softplus_neg(lp)) + double(model::softplus_neg(-ln));
      parts.rec = loss;
      parts.n_rec = 1;
      parts.total += loss;
      if (grads) {
        const S raw_p = (p.score_w.col(0).transpose() * pos_z.z)(0);
        const S raw_n = (p.score_w.col(0).transpose() * neg_z.z)(0);
        const S dlp = std::abs(raw_p) < S(model::kScoreLogitClamp)
                          ? model::sigmoid(lp) - S(1)
                          : S(0);
        const S dln = std::abs(raw_n) < S(model::kScoreLogitClamp)
                          ? model::sigmoid(ln)
                          : S(0);
        grads->score_w.col(0) += dlp * pos_z.z + dln * neg_z.z;
        Vec<S> dzp = dlp * p.score_w.col(0);
        Vec<S> dzn = dln * p.score_w.col(0);
        Mat<S> df_p = Mat<S>::Zero(pos_trace.final_states().rows(), p.dims.d);
        model::backward_representation(pos_z, dzp, obj.input.user_pos,
                                       obj.input.item_pos, p, *grads, df_p);
        model::backward_encoder(obj.input, p, pos_trace, std::move(df_p),
                                *grads);
        Mat<S> df_n = Mat<S>::Zero(neg_trace.final_states().rows(), p.dims.d);
        model::backward_representation(neg_z, dzn, obj.rec_negative.user_pos,
                                       obj.rec_negative.item_pos, p, *grads,
                                       df_n);
        model::backward_encoder(obj.rec_negative, p, neg_trace, std::move(df_n),
                                *grads);
      }
      break;
    }
  }
  if (!std::isfinite(parts.total))
    throw numeric_fault("non-finite objective loss");
  return parts;
}

// Mean loss over the batch with matching gradients.
template <class S>
LossParts loss_and_gradients(const ModelParams<S>& p,
                             const std::vector<Objective>& batch,
                             Gradients<S>* grads) {
  if (batch.empty()) throw contract_error("empty batch");
  LossParts sum;
  for (const auto& obj : batch) sum.add(evaluate_objective(p, obj, grads));
  const double inv = 1.0 / double(batch.size());
  sum.total *= inv;
  if (grads) model::scale(*grads, S(inv));
  return sum;
}

// ---------------------------------------------------------------------------
// Course schedule: elementary -> advanced -> fine-tune (Modes cover the
// ablations: joint multi-task pre-training, reversed courses, no pre-training).
// ---------------------------------------------------------------------------

enum class CurriculumMode { standard, multi_task, reverse_courses, no_pretrain };

struct CourseConfig {
  double w_mnp = 0.4, w_mep = 0.2, w_mtp = 0.4;
  double w_scl = 1.0;  // multi-task mode only
  double mask_node_prob = 0.4, mask_edge_prob = 0.2;
  double tau = 1.0;
  double aug_ratio = 0.2;
  unsigned scl_negatives = 4;
  unsigned batch_size = 256;
  double lr_pretrain = 1e-3;
  double lr_finetune = 1e-4;
  unsigned epochs_elementary = 10;
  unsigned epochs_advanced = 10;
  unsigned epochs_finetune = 30;
  unsigned patience = 5;
  bool mnp_literal = false;
  unsigned threads = 0;  // 0 = hardware concurrency
  std::uint64_t seed = 0;
  CurriculumMode mode = CurriculumMode::standard;

  void validate() const {
    if (w_mnp < 0 || w_mep < 0 || w_mtp < 0 || w_scl < 0)
      throw config_error("loss weights must be >= 0");
    if (tau <= 0) throw config_error("tau must be positive");
    if (aug_ratio <= 0 || aug_ratio >= 1)
      throw config_error("augmentation ratio must be in (0,1)");
    if (mask_node_prob <= 0 || mask_node_prob >= 1 || mask_edge_prob <= 0 ||
        mask_edge_prob >= 1)
      throw config_error("mask probabilities must be in (0,1)");
    if (batch_size == 0) throw config_error("batch size must be positive");
    if (scl_negatives == 0) throw config_error("SCL needs >= 1 negative");
  }
};

struct EpochLog {
  std::string course;
  unsigned epoch = 0;
  LossParts losses;
  double valid_hr = -1;  // <0 when no validation ran
  double wall_ms = 0;
};

struct TrainState {
  std::vector<std::string> course_sequence;
  std::vector<EpochLog> history;
  std::string current_course;
  unsigned epoch = 0;
  std::uint64_t skipped_examples = 0;
};

struct TrainHooks {
  // Returns validation HR@10; enables early stopping during fine-tuning.
  std::function<double(const ModelParams<float>&)> validate;
  std::function<void(const EpochLog&)> on_epoch;
};

namespace detail {

// Uniform item not interacted with by `u`; nullopt when no such item exists.
inline std::optional<hin::NodeId> sample_negative_item(const hin::Hin& hin,
                                                       hin::NodeId u,
                                                       rng::Stream& rs) {
  const hin::NodeId n_items = hin.type_count(hin.schema().item_type());
  const auto& owned = hin.items_of(u);
  if (owned.size() >= n_items) return std::nullopt;
  for (int tries = 0; tries < 1000; ++tries) {
    const auto cand = static_cast<hin::NodeId>(rs.index(n_items));
    if (!std::binary_search(owned.begin(), owned.end(), cand)) return cand;
  }
  for (hin::NodeId cand = 0; cand < n_items; ++cand)
    if (!std::binary_search(owned.begin(), owned.end(), cand)) return cand;
  return std::nullopt;
}

struct BatchOutcome {
  LossParts losses;
  std::uint64_t skipped = 0;
};

}  // namespace detail

class Trainer {
 public:
  Trainer(const subgraph::SubgraphProvider& provider,
          const hin::InteractionSplit& split, const CourseConfig& cfg)
      : provider_(provider),
        split_(split),
        cfg_(cfg),
        offsets_(provider.graph()),
        n_metapaths_(provider.metapaths().size()) {
    cfg_.validate();
  }

  TrainState run(ModelParams<float>& params, const TrainHooks& hooks = {}) {
    TrainState state;
    pretrain_into(state, params, hooks);
    finetune_into(state, params, hooks);
    return state;
  }

  TrainState run_pretrain(ModelParams<float>& params,
                          const TrainHooks& hooks = {}) {
    TrainState state;
    pretrain_into(state, params, hooks);
    return state;
  }

  TrainState run_finetune(ModelParams<float>& params,
                          const TrainHooks& hooks = {}) {
    TrainState state;
    finetune_into(state, params, hooks);
    return state;
  }

  void pretrain_into(TrainState& state, ModelParams<float>& params,
                     const TrainHooks& hooks) {
    const auto mode = cfg_.mode;
    if (mode == CurriculumMode::standard) {
      run_course(params, state, hooks, "elementary", cfg_.epochs_elementary);
      run_course(params, state, hooks, "advanced", cfg_.epochs_advanced);
    } else if (mode == CurriculumMode::reverse_courses) {
      run_course(params, state, hooks, "advanced", cfg_.epochs_advanced);
      run_course(params, state, hooks, "elementary", cfg_.epochs_elementary);
    } else if (mode == CurriculumMode::multi_task) {
      run_course(params, state, hooks, "multi-task",
                 cfg_.epochs_elementary + cfg_.epochs_advanced);
    }
  }

  void finetune_into(TrainState& state, ModelParams<float>& params,
                     const TrainHooks& hooks) {
    run_course(params, state, hooks, "finetune", cfg_.epochs_finetune);
  }

 private:
  void run_course(ModelParams<float>& params, TrainState& state,
                  const TrainHooks& hooks, const std::string& course,
                  unsigned epochs) {
    if (epochs == 0) return;
    state.course_sequence.push_back(course);
    state.current_course = course;
    const bool finetune = course == "finetune";
    auto adam = model::AdamState<float>::make(
        params, finetune ? cfg_.lr_finetune : cfg_.lr_pretrain);

    ModelParams<float> last_good = params;
    ModelParams<float> best = params;
    double best_hr = -1;
    unsigned bad_epochs = 0;

    for (unsigned epoch = 0; epoch < epochs; ++epoch) {
      state.epoch = epoch;
      const auto t0 = std::chrono::steady_clock::now();
      auto order = shuffled_train_indices(course, epoch);
      LossParts epoch_losses;
      std::uint64_t steps = 0;
      try {
        for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
          const std::size_t end = std::min(order.size(), b + cfg_.batch_size);
          auto outcome = train_batch(params, adam, course, epoch,
                                     {order.begin() + b, order.begin() + end});
          epoch_losses.add(outcome.losses);
          state.skipped_examples += outcome.skipped;
          ++steps;
        }
      } catch (const numeric_fault&) {
        params = last_good;  // leave the caller a checkpointable state
        throw;
      }
      last_good = params;
      if (steps) epoch_losses.total /= double(steps);

      EpochLog log;
      log.course = course;
      log.epoch = epoch;
      log.losses = epoch_losses;
      if (finetune && hooks.validate) log.valid_hr = hooks.validate(params);
      log.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      if (hooks.on_epoch) hooks.on_epoch(log);
      state.history.push_back(log);

      if (finetune && hooks.validate) {
        if (log.valid_hr > best_hr) {
          best_hr = log.valid_hr;
          best = params;
          bad_epochs = 0;
        } else if (++bad_epochs >= cfg_.patience) {
          break;
        }
      }
    }
    if (finetune && hooks.validate && best_hr >= 0) params = best;
  }

  std::vector<std::uint32_t> shuffled_train_indices(const std::string& course,
                                                    unsigned epoch) const {
    std::vector<std::uint32_t> idx(split_.train.size());
    for (std::uint32_t k = 0; k < idx.size(); ++k) idx[k] = k;
    rng::Stream rs(rng::derive(cfg_.seed, "shuffle:" + course, epoch));
    for (std::size_t k = idx.size(); k > 1; --k)
      std::swap(idx[k - 1], idx[rs.index(k)]);
    return idx;
  }

  detail::BatchOutcome train_batch(ModelParams<float>& params,
                                   model::AdamState<float>& adam,
                                   const std::string& course, unsigned epoch,
                                   std::vector<std::uint32_t> batch) {
    const unsigned threads =
        cfg_.threads ? cfg_.threads : default_threads();
    std::vector<Gradients<float>> chunk_grads;
    std::vector<LossParts> chunk_losses(threads);
    std::vector<std::uint64_t> chunk_skipped(threads, 0);
    std::vector<std::size_t> chunk_examples(threads, 0);
    for (unsigned t = 0; t < threads; ++t)
      chunk_grads.push_back(model::zeros_like(params));

    parallel_chunks(batch.size(), threads, [&](std::size_t lo, std::size_t hi,
                                               unsigned chunk) {
      for (std::size_t k = lo; k < hi; ++k) {
        auto objs = build_examples(course, epoch, batch[k]);
        if (objs.empty()) {
          ++chunk_skipped[chunk];
          continue;
        }
        for (const auto& obj : objs)
          chunk_losses[chunk].add(
              evaluate_objective(params, obj, &chunk_grads[chunk]));
        ++chunk_examples[chunk];
      }
    });

    detail::BatchOutcome out;
    std::size_t n_examples = 0;
    for (unsigned t = 0; t < threads; ++t) {
      out.losses.add(chunk_losses[t]);
      out.skipped += chunk_skipped[t];
      n_examples += chunk_examples[t];
    }
    if (n_examples == 0) return out;
    out.losses.total /= double(n_examples);
    Gradients<float>& total = chunk_grads[0];
    for (unsigned t = 1; t < threads; ++t) accumulate(total, chunk_grads[t]);
    model::scale(total, 1.0f / float(n_examples));
    if (!std::isfinite(out.losses.total))
      throw numeric_fault("non-finite batch loss in course " + course);
    model::adam_step(params, total, adam);
    return out;
  }

  // One or more objectives for train pair `index` under the given course.
  std::vector<Objective> build_examples(const std::string& course,
                                        unsigned epoch, std::uint32_t index) {
    const auto [u, i] = split_.train[index];
    const std::uint64_t ex_seed =
        rng::derive(cfg_.seed, "example:" + course, epoch, index);
    std::vector<Objective> out;

    if (course == "elementary" || course == "multi-task") {
      auto entry = provider_.get(u, i);
      Objective obj;
      obj.kind = ObjectiveKind::elementary;
      obj.w_mnp = cfg_.w_mnp;
      obj.w_mep = cfg_.w_mep;
      obj.w_mtp = cfg_.w_mtp;
      obj.mnp_literal = cfg_.mnp_literal;
      obj.mtp_labels = entry->metapath_labels(n_metapaths_);
      Input base = Input::from(entry->sequence, offsets_);
      auto node_masked =
          mask_nodes(base, cfg_.mask_node_prob, ex_seed, offsets_);
      Input after_nodes = node_masked ? node_masked->first : base;
      if (node_masked) obj.mask = node_masked->second;
      auto edge_masked =
          mask_edges(after_nodes, cfg_.mask_edge_prob, ex_seed);
      if (edge_masked) {
        obj.input = std::move(edge_masked->first);
        obj.mask.edges = std::move(edge_masked->second.edges);
        obj.mask.edge_negatives = std::move(edge_masked->second.edge_negatives);
      } else {
        obj.input = std::move(after_nodes);
      }
      out.push_back(std::move(obj));
    }
    if (course == "advanced" || course == "multi-task") {
      auto scl = build_scl_example(u, i, ex_seed);
      if (scl) out.push_back(std::move(*scl));
    }
    if (course == "finetune") {
      rng::Stream rs(rng::derive(ex_seed, "rec-negative"));
      auto neg = detail::sample_negative_item(provider_.graph(), u, rs);
      if (!neg) return out;
      Objective obj;
      obj.kind = ObjectiveKind::rec;
      obj.input = Input::from(provider_.get(u, i)->sequence, offsets_);
      obj.rec_negative =
          Input::from(provider_.build(u, *neg).sequence, offsets_);
      out.push_back(std::move(obj));
    }
    return out;
  }

  std::optional<Objective> build_scl_example(hin::NodeId u, hin::NodeId i,
                                             std::uint64_t ex_seed) {
    auto entry = provider_.get(u, i);
    Objective obj;
    obj.kind = ObjectiveKind::scl;
    obj.tau = cfg_.tau;
    obj.w_scl = cfg_.w_scl;
    obj.input = Input::from(entry->sequence, offsets_);

    // positive: an augmented view of the same (u, i) subgraph
    rng::Stream rs(rng::derive(ex_seed, "scl"));
    subgraph::MultiSlotSequence positive_seq;
    if (entry->selected.empty()) {
      positive_seq = entry->sequence;  // fallback pairs augment to themselves
    } else {
      const auto strategy = static_cast<AugmentStrategy>(rs.index(3));
      auto aug = augment_paths(entry->selected, strategy, cfg_.aug_ratio,
                               entry->pool, rng::derive(ex_seed, "scl-aug"));
      const hin::NodeRef un{provider_.graph().schema().user_type(), u};
      const hin::NodeRef in{provider_.graph().schema().item_type(), i};
      positive_seq = subgraph::sequence_from_paths(un, in, std::move(aug.paths));
    }
    obj.scl_positive = Input::from(positive_seq, offsets_);

    for (unsigned k = 0; k < cfg_.scl_negatives; ++k) {
      auto neg = detail::sample_negative_item(provider_.graph(), u, rs);
      if (!neg) break;
      obj.scl_negatives.push_back(
          Input::from(provider_.build(u, *neg).sequence, offsets_));
    }
    if (obj.scl_negatives.empty()) return std::nullopt;
    return obj;
  }

  const subgraph::SubgraphProvider& provider_;
  const hin::InteractionSplit& split_;
  CourseConfig cfg_;
  TypeOffsets offsets_;
  std::size_t n_metapaths_;
};

inline TrainState run_curriculum(const subgraph::SubgraphProvider& provider,
                                 const hin::InteractionSplit& split,
                                 const CourseConfig& cfg,
                                 ModelParams<float>& params,
                                 const TrainHooks& hooks = {}) {
  Trainer trainer(provider, split, cfg);
  return trainer.run(params, hooks);
}

// Max relative error between analytic and central finite-difference
// gradients, over every parameter entry.
inline double finite_difference_check(ModelParams<double>& params,
                                      const Objective& obj,
                                      double step = 1e-4) {
  Gradients<double> analytic = model::zeros_like(params);
  evaluate_objective(params, obj, &analytic);
  auto ts = params.tensors();
  auto gs = analytic.tensors();
  double worst = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    Mat<double>& t = *ts[i];
    for (Eigen::Index c = 0; c < t.cols(); ++c)
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        const double saved = t(r, c);
        t(r, c) = saved + step;
        const double lp = evaluate_objective<double>(params, obj, nullptr).total;
        t(r, c) = saved - step;
        const double lm = evaluate_objective<double>(params, obj, nullptr).total;
        t(r, c) = saved;
        const double numeric = (lp - lm) / (2 * step);
        const double a = (*gs[i])(r, c);
        const double err =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, err);
      }
  }
  return worst;
}

}  // namespace chest::curriculum
