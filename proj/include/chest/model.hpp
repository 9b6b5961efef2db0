#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chest/common.hpp"
#include "chest/hin.hpp"
#include "chest/io.hpp"
#include "chest/subgraph.hpp"

namespace chest::model {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline constexpr double kScoreLogitClamp = 30.0;
inline constexpr double kLayerNormEps = 1e-5;

// -ln sigma(x), computed without overflow.
template <class S>
S softplus_neg(S x) {
  // softplus(-x) = max(-x, 0) + log1p(exp(-| -x |))
  const S t = -x;
  return std::max(t, S(0)) + std::log1p(std::exp(-std::abs(t)));
}

template <class S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

struct ModelDims {
  std::uint32_t n_nodes = 0;      // global node-id space |V|
  std::uint32_t n_types = 0;      // |A|
  std::uint32_t n_slots = 8;      // |S|
  std::uint32_t n_max = 64;       // precursor-position table rows
  std::uint32_t d = 64;
  std::uint32_t d_ff = 128;
  std::uint32_t layers = 2;
  std::uint32_t heads = 2;
  std::uint32_t n_metapaths = 0;  // |P|
  bool layer_norm = true;

  void validate() const {
    if (d == 0 || heads == 0 || layers == 0)
      throw config_error("model dims must be positive");
    if (d % heads != 0) throw config_error("d must be divisible by heads");
    if (n_nodes == 0 || n_types == 0 || n_metapaths == 0)
      throw config_error("model dims need node/type/meta-path counts");
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Maps per-type ids into the single id space of the node-ID table.
struct TypeOffsets {
  std::vector<std::uint64_t> off;

  explicit TypeOffsets(const std::vector<hin::NodeId>& counts) {
    off.assign(counts.size() + 1, 0);
    for (std::size_t t = 0; t < counts.size(); ++t)
      off[t + 1] = off[t] + counts[t];
  }
  explicit TypeOffsets(const hin::Hin& hin)
      : TypeOffsets([&] {
          std::vector<hin::NodeId> c;
          for (std::size_t t = 0; t < hin.schema().node_types.size(); ++t)
            c.push_back(hin.type_count(static_cast<hin::TypeIdx>(t)));
          return c;
        }()) {}

  std::uint32_t operator()(hin::NodeRef n) const {
    return static_cast<std::uint32_t>(off[n.type] + n.id);
  }
  std::uint64_t total() const { return off.back(); }
};

// A multi-slot sequence in model coordinates.
struct Input {
  std::vector<std::uint32_t> node;          // global node ids
  std::vector<std::uint16_t> type;          // type indices
  std::vector<std::uint16_t> slot;          // slot indices
  std::vector<std::vector<std::uint16_t>> precursors;
  std::vector<std::uint8_t> id_masked;      // ID term replaced by the mask row
  std::uint16_t user_pos = 0;
  std::uint16_t item_pos = 0;

  std::size_t size() const { return node.size(); }

  static Input from(const subgraph::MultiSlotSequence& seq,
                    const TypeOffsets& offsets) {
    Input in;
    in.node.reserve(seq.size());
    for (const auto& el : seq.elements) {
      in.node.push_back(offsets(el.node));
      in.type.push_back(el.node.type);
      in.slot.push_back(el.slot);
      in.precursors.push_back(el.precursors);
    }
    in.id_masked.assign(seq.size(), 0);
    in.user_pos = seq.user_position;
    in.item_pos = seq.item_position;
    return in;
  }
};

// ---------------------------------------------------------------------------
// Parameters. All tensors are visited in a fixed order under stable names;
// the optimizer, the checkpoint format and the finite-difference checker all
// rely on that ordering.
// ---------------------------------------------------------------------------

template <class S>
struct EncoderLayerParams {
  Mat<S> wq, wk, wv, wo;        // d x d (head blocks side by side), d x d
  Mat<S> ln1_g, ln1_b;          // d x 1
  Mat<S> w1, b1;                // d x d_ff, d_ff x 1
  Mat<S> w2, b2;                // d_ff x d, d x 1
  Mat<S> ln2_g, ln2_b;          // d x 1
};

template <class S>
struct ModelParams {
  ModelDims dims;
  Mat<S> node_id;    // |V| x d
  Mat<S> node_type;  // |A| x d
  Mat<S> slot;       // |S| x d
  Mat<S> precursor;  // n_max x d
  Mat<S> mask_row;   // 1 x d
  std::vector<EncoderLayerParams<S>> layers;
  Mat<S> mlp_w;      // 2d x d   (Eq. 7 head)
  Mat<S> mlp_b;      // d x 1
  Mat<S> score_w;    // d x 1
  Mat<S> mtp_w;      // |P| x d
  Mat<S> wn, we;     // d x d

  template <class F>
  void for_each(F&& f) {
    f("node_id", node_id);
    f("node_type", node_type);
    f("slot", slot);
    f("precursor", precursor);
    f("mask_row", mask_row);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      auto& L = layers[l];
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "ln1_g", L.ln1_g);
      f(p + "ln1_b", L.ln1_b);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
      f(p + "ln2_g", L.ln2_g);
      f(p + "ln2_b", L.ln2_b);
    }
    f("mlp_w", mlp_w);
    f("mlp_b", mlp_b);
    f("score_w", score_w);
    f("mtp_w", mtp_w);
    f("wn", wn);
    f("we", we);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& name, Mat<S>& t) {
          f(name, const_cast<const Mat<S>&>(t));
        });
  }

  std::vector<Mat<S>*> tensors() {
    std::vector<Mat<S>*> out;
    for_each([&](const std::string&, Mat<S>& t) { out.push_back(&t); });
    return out;
  }
};

template <class S>
ModelParams<S> make_params(const ModelDims& dims) {
  dims.validate();
  ModelParams<S> p;
  p.dims = dims;
  const auto d = dims.d;
  p.node_id.setZero(dims.n_nodes, d);
  p.node_type.setZero(dims.n_types, d);
  p.slot.setZero(dims.n_slots, d);
  p.precursor.setZero(dims.n_max, d);
  p.mask_row.setZero(1, d);
  p.layers.resize(dims.layers);
  for (auto& L : p.layers) {
    L.wq.setZero(d, d);
    L.wk.setZero(d, d);
    L.wv.setZero(d, d);
    L.wo.setZero(d, d);
    L.ln1_g.setOnes(d, 1);
    L.ln1_b.setZero(d, 1);
    L.w1.setZero(d, dims.d_ff);
    L.b1.setZero(dims.d_ff, 1);
    L.w2.setZero(dims.d_ff, d);
    L.b2.setZero(d, 1);
    L.ln2_g.setOnes(d, 1);
    L.ln2_b.setZero(d, 1);
  }
  p.mlp_w.setZero(2 * d, d);
  p.mlp_b.setZero(d, 1);
  p.score_w.setZero(d, 1);
  p.mtp_w.setZero(dims.n_metapaths, d);
  p.wn.setZero(d, d);
  p.we.setZero(d, d);
  return p;
}

// Uniform init in [-1/sqrt(d), 1/sqrt(d)], seeded per tensor so the layout of
// the visitation order never changes the draw a tensor receives.
template <class S>
ModelParams<S> init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams<S> p = make_params<S>(dims);
  const double bound = 1.0 / std::sqrt(double(dims.d));
  p.for_each([&](const std::string& name, Mat<S>& t) {
    if (name.find("ln") != std::string::npos) return;  // keep norm identity
    rng::Stream rs(rng::derive(seed, "param:" + name));
    for (Eigen::Index c = 0; c < t.cols(); ++c)
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        t(r, c) = static_cast<S>(rs.real(-bound, bound));
  });
  return p;
}

template <class S>
ModelParams<S> zeros_like(const ModelParams<S>& p) {
  ModelParams<S> g = make_params<S>(p.dims);
  for (auto* t : g.tensors()) t->setZero();  // make_params leaves LN gains at 1
  return g;
}

template <class S, class T>
ModelParams<T> cast_params(const ModelParams<S>& p) {
  ModelParams<T> out = make_params<T>(p.dims);
  auto src = const_cast<ModelParams<S>&>(p).tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    *dst[i] = src[i]->template cast<T>();
  return out;
}

template <class S>
void accumulate(ModelParams<S>& into, const ModelParams<S>& from) {
  auto a = into.tensors();
  auto b = const_cast<ModelParams<S>&>(from).tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i] += *b[i];
}

template <class S>
void scale(ModelParams<S>& g, S factor) {
  for (auto* t : g.tensors()) *t *= factor;
}

// ---------------------------------------------------------------------------
// Forward pass with a full activation trace.
// ---------------------------------------------------------------------------

template <class S>
struct LayerTrace {
  Mat<S> x;                     // layer input, n x d
  Mat<S> q, k, v;               // n x d
  std::vector<Mat<S>> probs;    // per head, n x n
  Mat<S> heads;                 // concatenated head outputs, n x d
  Mat<S> mh;                    // heads * Wo
  Mat<S> r1, y;                 // residual, post-LN1
  Mat<S> xhat1;                 // LN1 normalized input
  Vec<S> inv1;                  // LN1 1/std per row
  Mat<S> h_pre, h;              // FFN pre/post ReLU, n x d_ff
  Mat<S> ffn, r2, f;            // FFN out, residual, post-LN2
  Mat<S> xhat2;
  Vec<S> inv2;
};

template <class S>
struct ActivationTrace {
  Mat<S> e;  // composite embeddings F^0
  std::vector<LayerTrace<S>> layers;

  const Mat<S>& final_states() const {
    return layers.empty() ? e : layers.back().f;
  }
};

// Eq.: row t = M_V[id] (or the mask row) + M_A[type] + M_S[slot] + sum of
// M_P over precursor positions.
template <class S>
Mat<S> compose_embeddings(const Input& in, const ModelParams<S>& p) {
  const auto n = static_cast<Eigen::Index>(in.size());
  if (n == 0) throw contract_error("empty sequence");
  if (n > static_cast<Eigen::Index>(p.dims.n_max))
    throw contract_error("sequence length " + std::to_string(n) +
                         " exceeds n_max " + std::to_string(p.dims.n_max));
  Mat<S> e(n, p.dims.d);
  for (Eigen::Index t = 0; t < n; ++t) {
    if (in.node[t] >= p.dims.n_nodes)
      throw contract_error("node id out of table range");
    if (in.type[t] >= p.dims.n_types)
      throw contract_error("type index out of table range");
    if (in.slot[t] >= p.dims.n_slots)
      throw contract_error("slot index " + std::to_string(in.slot[t]) +
                           " out of table range");
    e.row(t) = in.id_masked[t] ? p.mask_row.row(0) : p.node_id.row(in.node[t]);
    e.row(t) += p.node_type.row(in.type[t]);
    e.row(t) += p.slot.row(in.slot[t]);
    for (auto pos : in.precursors[t]) {
      if (pos >= p.dims.n_max)
        throw contract_error("precursor position out of table range");
      e.row(t) += p.precursor.row(pos);
    }
  }
  return e;
}

namespace detail {

template <class S>
void layer_norm_rows(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b,
                     Mat<S>& out, Mat<S>& xhat, Vec<S>& inv) {
  const auto n = x.rows();
  const auto d = x.cols();
  out.resize(n, d);
  xhat.resize(n, d);
  inv.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().sum() / S(d);
    const S istd = S(1) / std::sqrt(var + S(kLayerNormEps));
    inv(r) = istd;
    xhat.row(r) = (x.row(r).array() - mean) * istd;
    out.row(r) = xhat.row(r).cwiseProduct(g.transpose()) + b.transpose();
  }
}

template <class S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat,
                         const Vec<S>& inv, const Mat<S>& g, Mat<S>& dx,
                         Mat<S>& dg, Mat<S>& db) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  dx.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    dg += dy.row(r).cwiseProduct(xhat.row(r)).transpose();
    db += dy.row(r).transpose();
    const Eigen::Matrix<S, 1, Eigen::Dynamic> dxhat =
        dy.row(r).cwiseProduct(g.transpose());
    const S m1 = dxhat.mean();
    const S m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = ((dxhat.array() - m1) - xhat.row(r).array() * m2) * inv(r);
  }
}

template <class S>
Mat<S> softmax_rows(const Mat<S>& s) {
  Mat<S> p(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const S mx = s.row(r).maxCoeff();
    p.row(r) = (s.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

// dS = P .* (dP - rowsum(dP .* P))
template <class S>
Mat<S> softmax_rows_backward(const Mat<S>& probs, const Mat<S>& dprobs) {
  Mat<S> ds(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const S dot = dprobs.row(r).cwiseProduct(probs.row(r)).sum();
    ds.row(r) = (probs.row(r).array() * (dprobs.row(r).array() - dot)).matrix();
  }
  return ds;
}

}  // namespace detail

// Stacked multi-head self-attention blocks with post-norm residuals (norms
// optional for tests via dims.layer_norm).
template <class S>
ActivationTrace<S> encode(Mat<S> e, const ModelParams<S>& p) {
  const auto n = e.rows();
  if (n < 1) throw contract_error("encode needs n >= 1");
  const auto d = static_cast<Eigen::Index>(p.dims.d);
  const auto h = static_cast<Eigen::Index>(p.dims.heads);
  const auto dh = d / h;
  const S scale = S(1) / std::sqrt(S(dh));

  ActivationTrace<S> trace;
  trace.e = std::move(e);
  Mat<S> x = trace.e;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    LayerTrace<S> t;
    t.x = x;
    t.q.noalias() = x * L.wq;
    t.k.noalias() = x * L.wk;
    t.v.noalias() = x * L.wv;
    t.heads.resize(n, d);
    t.probs.resize(h);
    for (Eigen::Index i = 0; i < h; ++i) {
      const auto qi = t.q.middleCols(i * dh, dh);
      const auto ki = t.k.middleCols(i * dh, dh);
      const auto vi = t.v.middleCols(i * dh, dh);
      Mat<S> scores = (qi * ki.transpose()) * scale;
      t.probs[i] = detail::softmax_rows(scores);
      t.heads.middleCols(i * dh, dh).noalias() = t.probs[i] * vi;
    }
    t.mh.noalias() = t.heads * L.wo;
    t.r1 = t.x + t.mh;
    if (p.dims.layer_norm) {
      detail::layer_norm_rows(t.r1, L.ln1_g, L.ln1_b, t.y, t.xhat1, t.inv1);
    } else {
      t.y = t.r1;
    }
    t.h_pre = (t.y * L.w1).rowwise() + L.b1.col(0).transpose();
    t.h = t.h_pre.cwiseMax(S(0));
    t.ffn = (t.h * L.w2).rowwise() + L.b2.col(0).transpose();
    t.r2 = t.y + t.ffn;
    if (p.dims.layer_norm) {
      detail::layer_norm_rows(t.r2, L.ln2_g, L.ln2_b, t.f, t.xhat2, t.inv2);
    } else {
      t.f = t.r2;
    }
    if (!t.f.allFinite())
      throw numeric_fault("non-finite activation in encoder layer " +
                          std::to_string(l));
    x = t.f;
    trace.layers.push_back(std::move(t));
  }
  return trace;
}

template <class S>
ActivationTrace<S> encode(const Input& in, const ModelParams<S>& p) {
  return encode(compose_embeddings(in, p), p);
}

// ---------------------------------------------------------------------------
// Heads. z = ReLU(W_mlp^T (F_u ++ F_i) + b); score = sigma(w . z).
// ---------------------------------------------------------------------------

template <class S>
struct ZTrace {
  Vec<S> c;  // 2d concatenation
  Vec<S> a;  // pre-ReLU
  Vec<S> z;  // representation
};

template <class S>
ZTrace<S> subgraph_representation(const ActivationTrace<S>& trace,
                                  std::uint16_t user_pos,
                                  std::uint16_t item_pos,
                                  const ModelParams<S>& p) {
  const auto& f = trace.final_states();
  if (user_pos >= f.rows() || item_pos >= f.rows())
    throw contract_error("user/item position out of range");
  ZTrace<S> zt;
  const auto d = f.cols();
  zt.c.resize(2 * d);
  zt.c.head(d) = f.row(user_pos).transpose();
  zt.c.tail(d) = f.row(item_pos).transpose();
  zt.a.noalias() = p.mlp_w.transpose() * zt.c;
  zt.a += p.mlp_b.col(0);
  zt.z = zt.a.cwiseMax(S(0));
  return zt;
}

template <class S>
S score_logit(const Vec<S>& z, const ModelParams<S>& p) {
  const S raw = (p.score_w.col(0).transpose() * z)(0);
  return std::clamp(raw, S(-kScoreLogitClamp), S(kScoreLogitClamp));
}

// Strictly inside (0,1) thanks to the logit clamp.
template <class S>
S interaction_score(const Vec<S>& z, const ModelParams<S>& p) {
  return sigmoid(score_logit(z, p));
}

// ---------------------------------------------------------------------------
// Backward passes. Each accumulates into a Gradients (= ModelParams) bag.
// ---------------------------------------------------------------------------

template <class S>
using Gradients = ModelParams<S>;

template <class S>
void backward_embeddings(const Input& in, const Mat<S>& de, Gradients<S>& g) {
  for (Eigen::Index t = 0; t < de.rows(); ++t) {
    if (in.id_masked[t])
      g.mask_row.row(0) += de.row(t);
    else
      g.node_id.row(in.node[t]) += de.row(t);
    g.node_type.row(in.type[t]) += de.row(t);
    g.slot.row(in.slot[t]) += de.row(t);
    for (auto pos : in.precursors[t]) g.precursor.row(pos) += de.row(t);
  }
}

template <class S>
void backward_encoder(const Input& in, const ModelParams<S>& p,
                      const ActivationTrace<S>& trace, Mat<S> df,
                      Gradients<S>& g) {
  const auto d = static_cast<Eigen::Index>(p.dims.d);
  const auto h = static_cast<Eigen::Index>(p.dims.heads);
  const auto dh = d / h;
  const S scale = S(1) / std::sqrt(S(dh));

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    auto& gl = g.layers[li];
    const auto& t = trace.layers[li];

    Mat<S> dr2;
    if (p.dims.layer_norm) {
      detail::layer_norm_backward(df, t.xhat2, t.inv2, L.ln2_g, dr2, gl.ln2_g,
                                  gl.ln2_b);
    } else {
      dr2 = std::move(df);
    }
    Mat<S> dy = dr2;  // residual skip
    // FFN branch
    const Mat<S>& dffn = dr2;
    gl.w2.noalias() += t.h.transpose() * dffn;
    gl.b2.col(0) += dffn.colwise().sum().transpose();
    Mat<S> dhid = dffn * L.w2.transpose();
    dhid = dhid.cwiseProduct(
        (t.h_pre.array() > S(0)).template cast<S>().matrix());
    gl.w1.noalias() += t.y.transpose() * dhid;
    gl.b1.col(0) += dhid.colwise().sum().transpose();
    dy.noalias() += dhid * L.w1.transpose();

    Mat<S> dr1;
    if (p.dims.layer_norm) {
      detail::layer_norm_backward(dy, t.xhat1, t.inv1, L.ln1_g, dr1, gl.ln1_g,
                                  gl.ln1_b);
    } else {
      dr1 = std::move(dy);
    }
    Mat<S> dx = dr1;  // residual skip
    // attention branch
    const Mat<S>& dmh = dr1;
    gl.wo.noalias() += t.heads.transpose() * dmh;
    Mat<S> dheads = dmh * L.wo.transpose();
    Mat<S> dq(dx.rows(), d), dk(dx.rows(), d), dv(dx.rows(), d);
    for (Eigen::Index i = 0; i < h; ++i) {
      const auto qi = t.q.middleCols(i * dh, dh);
      const auto ki = t.k.middleCols(i * dh, dh);
      const auto vi = t.v.middleCols(i * dh, dh);
      const auto dhead = dheads.middleCols(i * dh, dh);
      Mat<S> dprob = dhead * vi.transpose();
      dv.middleCols(i * dh, dh).noalias() = t.probs[i].transpose() * dhead;
      Mat<S> dscore = detail::softmax_rows_backward(t.probs[i], dprob);
      dq.middleCols(i * dh, dh).noalias() = dscore * ki * scale;
      dk.middleCols(i * dh, dh).noalias() = dscore.transpose() * qi * scale;
    }
    gl.wq.noalias() += t.x.transpose() * dq;
    gl.wk.noalias() += t.x.transpose() * dk;
    gl.wv.noalias() += t.x.transpose() * dv;
    dx.noalias() += dq * L.wq.transpose();
    dx.noalias() += dk * L.wk.transpose();
    dx.noalias() += dv * L.wv.transpose();
    df = std::move(dx);
  }
  backward_embeddings(in, df, g);
}

// Backward of the z head: given dL/dz, accumulates mlp grads and adds the
// upstream contribution into dF rows (user_pos, item_pos).
template <class S>
void backward_representation(const ZTrace<S>& zt, const Vec<S>& dz,
                             std::uint16_t user_pos, std::uint16_t item_pos,
                             const ModelParams<S>& p, Gradients<S>& g,
                             Mat<S>& df) {
  const auto d = static_cast<Eigen::Index>(p.dims.d);
  Vec<S> da = dz.cwiseProduct(
      (zt.a.array() > S(0)).template cast<S>().matrix());
  g.mlp_w.noalias() += zt.c * da.transpose();
  g.mlp_b.col(0) += da;
  Vec<S> dc = p.mlp_w * da;
  df.row(user_pos) += dc.head(d).transpose();
  df.row(item_pos) += dc.tail(d).transpose();
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

template <class S>
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Mat<S>> m, v;

  static AdamState make(const ModelParams<S>& p, double lr) {
    AdamState st;
    st.learning_rate = lr;
    auto ts = const_cast<ModelParams<S>&>(p).tensors();
    for (auto* t : ts) {
      st.m.push_back(Mat<S>::Zero(t->rows(), t->cols()));
      st.v.push_back(Mat<S>::Zero(t->rows(), t->cols()));
    }
    return st;
  }
};

template <class S>
void adam_step(ModelParams<S>& params, const Gradients<S>& grads,
               AdamState<S>& st) {
  auto ps = params.tensors();
  auto gs = const_cast<Gradients<S>&>(grads).tensors();
  if (ps.size() != st.m.size())
    throw contract_error("adam state does not match parameter set");
  st.step += 1;
  const S b1 = S(st.beta1), b2 = S(st.beta2);
  const S bc1 = S(1) - std::pow(b1, S(st.step));
  const S bc2 = S(1) - std::pow(b2, S(st.step));
  const S lr = S(st.learning_rate);
  const S eps = S(st.eps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->rows() != gs[i]->rows() || ps[i]->cols() != gs[i]->cols())
      throw contract_error("gradient shape mismatch at tensor " +
                           std::to_string(i));
    st.m[i] = b1 * st.m[i] + (S(1) - b1) * (*gs[i]);
    st.v[i] = b2 * st.v[i] +
              (S(1) - b2) * gs[i]->cwiseProduct(*gs[i]);
    *ps[i] -= lr * (st.m[i] / bc1)
                  .cwiseQuotient(((st.v[i] / bc2).cwiseSqrt().array() + eps)
                                     .matrix());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary with named tensors (32-bit float payloads),
// Adam state, the trainer's RNG cursor and the config hash.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'H', 'E', 'S', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t root_seed = 0;
  std::string course;  // trainer cursor
  std::uint32_t epoch = 0;
};

namespace detail {

template <class S>
void write_tensor(io::Writer& w, const std::string& name, const Mat<S>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.rows()));
  w.u32(static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index c = 0; c < t.cols(); ++c)
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      w.f32(static_cast<float>(t(r, c)));
}

template <class S>
void read_tensor_into(io::Reader& r, const std::string& want_name, Mat<S>& t) {
  const std::string name = r.str();
  if (name != want_name)
    throw corrupt_corpus_error("checkpoint tensor order mismatch: expected " +
                               want_name + ", found " + name);
  const auto rows = r.u32();
  const auto cols = r.u32();
  if (rows != t.rows() || cols != t.cols())
    throw contract_error("checkpoint shape mismatch for " + name + ": file " +
                         std::to_string(rows) + "x" + std::to_string(cols) +
                         ", model " + std::to_string(t.rows()) + "x" +
                         std::to_string(t.cols()));
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index rr = 0; rr < rows; ++rr)
      t(rr, c) = static_cast<S>(r.f32());
}

inline void write_dims(io::Writer& w, const ModelDims& d) {
  w.u32(d.n_nodes);
  w.u32(d.n_types);
  w.u32(d.n_slots);
  w.u32(d.n_max);
  w.u32(d.d);
  w.u32(d.d_ff);
  w.u32(d.layers);
  w.u32(d.heads);
  w.u32(d.n_metapaths);
  w.u8(d.layer_norm ? 1 : 0);
}

inline ModelDims read_dims(io::Reader& r) {
  ModelDims d;
  d.n_nodes = r.u32();
  d.n_types = r.u32();
  d.n_slots = r.u32();
  d.n_max = r.u32();
  d.d = r.u32();
  d.d_ff = r.u32();
  d.layers = r.u32();
  d.heads = r.u32();
  d.n_metapaths = r.u32();
  d.layer_norm = r.u8() != 0;
  return d;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, const ModelParams<S>& params,
                     const AdamState<S>* adam, const CheckpointMeta& meta) {
  io::Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u64(meta.config_hash);
  w.u64(meta.root_seed);
  w.str(meta.course);
  w.u32(meta.epoch);
  detail::write_dims(w, params.dims);
  std::uint32_t count = 0;
  params.for_each([&](const std::string&, const Mat<S>&) { ++count; });
  w.u32(count);
  params.for_each([&](const std::string& name, const Mat<S>& t) {
    detail::write_tensor(w, name, t);
  });
  w.u8(adam ? 1 : 0);
  if (adam) {
    w.f64(adam->learning_rate);
    w.f64(adam->beta1);
    w.f64(adam->beta2);
    w.f64(adam->eps);
    w.u64(adam->step);
    for (const auto& m : adam->m)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r)
          w.f32(static_cast<float>(m(r, c)));
    for (const auto& v : adam->v)
      for (Eigen::Index c = 0; c < v.cols(); ++c)
        for (Eigen::Index r = 0; r < v.rows(); ++r)
          w.f32(static_cast<float>(v(r, c)));
  }
  std::vector<char> out;
  io::append_block(out, w);
  io::write_file(path, out);
}

template <class S>
ModelParams<S> load_checkpoint(const std::string& path, CheckpointMeta* meta,
                               AdamState<S>* adam = nullptr) {
  const auto buf = io::read_file(path);
  io::Reader outer(buf);
  const auto payload = io::read_block(outer);
  io::Reader r(payload);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw corrupt_corpus_error("not a checkpoint file: " + path);
  if (r.u32() != kCheckpointVersion)
    throw corrupt_corpus_error("unsupported checkpoint version");
  CheckpointMeta m;
  m.config_hash = r.u64();
  m.root_seed = r.u64();
  m.course = r.str();
  m.epoch = r.u32();
  const ModelDims dims = detail::read_dims(r);
  ModelParams<S> params = make_params<S>(dims);
  const auto count = r.u32();
  std::uint32_t want = 0;
  params.for_each([&](const std::string&, const Mat<S>&) { ++want; });
  if (count != want)
    throw contract_error("checkpoint tensor count mismatch");
  params.for_each([&](const std::string& name, Mat<S>& t) {
    detail::read_tensor_into(r, name, t);
  });
  const bool has_adam = r.u8() != 0;
  if (has_adam && adam) {
    *adam = AdamState<S>::make(params, 1e-3);
    adam->learning_rate = r.f64();
    adam->beta1 = r.f64();
    adam->beta2 = r.f64();
    adam->eps = r.f64();
    adam->step = r.u64();
    for (auto& mm : adam->m)
      for (Eigen::Index c = 0; c < mm.cols(); ++c)
        for (Eigen::Index rr = 0; rr < mm.rows(); ++rr)
          mm(rr, c) = static_cast<S>(r.f32());
    for (auto& vv : adam->v)
      for (Eigen::Index c = 0; c < vv.cols(); ++c)
        for (Eigen::Index rr = 0; rr < vv.rows(); ++rr)
          vv(rr, c) = static_cast<S>(r.f32());
  }
  if (meta) *meta = m;
  return params;
}

}  // namespace chest::model
