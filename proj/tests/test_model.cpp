#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "chest/model.hpp"
#include "model_fixtures.hpp"
#include "toys.hpp"

using namespace chest;
using namespace chest::model;
using Catch::Matchers::WithinAbs;

namespace {

// Independent straightforward reimplementation of the encoder (plain loops,
// no shared code with the library path) used as the forward-pass oracle.
using Rows = std::vector<std::vector<double>>;

Rows ref_encode(const Rows& e, const ModelParams<double>& p) {
  const std::size_t n = e.size();
  const std::size_t d = p.dims.d;
  const std::size_t h = p.dims.heads;
  const std::size_t dh = d / h;
  const std::size_t dff = p.dims.d_ff;

  auto matmul = [](const Rows& a, const Mat<double>& w) {
    Rows out(a.size(), std::vector<double>(w.cols(), 0.0));
    for (std::size_t r = 0; r < a.size(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (std::size_t k = 0; k < a[r].size(); ++k)
          out[r][c] += a[r][k] * w(static_cast<Eigen::Index>(k), c);
    return out;
  };
  auto layer_norm = [&](const Rows& x, const Mat<double>& g,
                        const Mat<double>& b) {
    Rows out = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
      double mean = 0;
      for (double v : x[r]) mean += v;
      mean /= double(d);
      double var = 0;
      for (double v : x[r]) var += (v - mean) * (v - mean);
      var /= double(d);
      for (std::size_t c = 0; c < d; ++c)
        out[r][c] = (x[r][c] - mean) / std::sqrt(var + kLayerNormEps) *
                        g(static_cast<Eigen::Index>(c), 0) +
                    b(static_cast<Eigen::Index>(c), 0);
    }
    return out;
  };

  Rows x = e;
  for (const auto& L : p.layers) {
    const Rows q = matmul(x, L.wq), k = matmul(x, L.wk), v = matmul(x, L.wv);
    Rows heads(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t r = 0; r < n; ++r) {
        std::vector<double> scores(n, 0.0);
        for (std::size_t c = 0; c < n; ++c) {
          for (std::size_t kk = 0; kk < dh; ++kk)
            scores[c] += q[r][i * dh + kk] * k[c][i * dh + kk];
          scores[c] /= std::sqrt(double(dh));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double z = 0;
        for (auto& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        for (auto& s : scores) s /= z;
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t kk = 0; kk < dh; ++kk)
            heads[r][i * dh + kk] += scores[c] * v[c][i * dh + kk];
      }
    }
    Rows mh = matmul(heads, L.wo);
    Rows r1 = x;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) r1[r][c] += mh[r][c];
    Rows y = p.dims.layer_norm ? layer_norm(r1, L.ln1_g, L.ln1_b) : r1;

    Rows hid = matmul(y, L.w1);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < dff; ++c)
        hid[r][c] = std::max(hid[r][c] + L.b1(static_cast<Eigen::Index>(c), 0),
                             0.0);
    Rows ffn = matmul(hid, L.w2);
    Rows r2 = y;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        r2[r][c] += ffn[r][c] + L.b2(static_cast<Eigen::Index>(c), 0);
    x = p.dims.layer_norm ? layer_norm(r2, L.ln2_g, L.ln2_b) : r2;
  }
  return x;
}

}  // namespace

TEST_CASE("composite embeddings sum the four tables") {
  auto dims = fixtures::small_dims();
  auto in = fixtures::random_input(dims, 5, 3);

  SECTION("all tables zero gives a zero matrix") {
    auto p = make_params<double>(dims);
    CHECK(compose_embeddings(in, p).isZero());
  }

  SECTION("single user-only element is M_V + M_A + M_S") {
    auto p = init_params<double>(dims, 5);
    p.precursor.setZero();
    Input solo;
    solo.node = {4};
    solo.type = {0};
    solo.slot = {0};
    solo.precursors = {{}};
    solo.id_masked = {0};
    solo.user_pos = solo.item_pos = 0;
    Mat<double> e = compose_embeddings(solo, p);
    Mat<double> want =
        p.node_id.row(4) + p.node_type.row(0) + p.slot.row(0);
    CHECK((e.row(0) - want).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("precursor term sums the addressed rows") {
    auto p = init_params<double>(dims, 6);
    Input two = fixtures::random_input(dims, 5, 4);
    two.precursors[4] = {1, 3};
    Mat<double> e = compose_embeddings(two, p);
    Mat<double> base =
        p.node_id.row(two.node[4]) + p.node_type.row(two.type[4]) +
        p.slot.row(two.slot[4]) + p.precursor.row(1) + p.precursor.row(3);
    CHECK((e.row(4) - base).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("masked positions use the mask row for the ID term only") {
    auto p = init_params<double>(dims, 7);
    auto masked = in;
    masked.id_masked[2] = 1;
    Mat<double> e0 = compose_embeddings(in, p);
    Mat<double> e1 = compose_embeddings(masked, p);
    Mat<double> delta = e1.row(2) - e0.row(2);
    Mat<double> want = p.mask_row.row(0) - p.node_id.row(in.node[2]);
    CHECK((delta - want).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((e1.row(0) - e0.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("out-of-range slot is a bounds error") {
    auto p = make_params<double>(dims);
    auto bad = in;
    bad.slot[1] = static_cast<std::uint16_t>(dims.n_slots);
    CHECK_THROWS_AS(compose_embeddings(bad, p), contract_error);
  }
}

TEST_CASE("single-token attention with identity projections passes through") {
  ModelDims dims = fixtures::small_dims(4, 1, 1);
  dims.layer_norm = false;  // test mode
  auto p = make_params<double>(dims);
  p.layers[0].wq.setIdentity();
  p.layers[0].wk.setIdentity();
  p.layers[0].wv.setIdentity();
  p.layers[0].wo.setIdentity();
  // FFN already zero
  Mat<double> e(1, 4);
  e << 0.3, -1.2, 0.7, 2.0;
  auto trace = encode(e, p);
  // softmax over one key is 1, so attention returns the value row; the
  // residual then doubles the input.
  CHECK((trace.final_states() - 2 * e).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THAT(trace.layers[0].probs[0](0, 0), WithinAbs(1.0, 1e-12));
}

TEST_CASE("attention probability rows sum to one") {
  auto dims = fixtures::small_dims(8, 2, 2);
  auto p = init_params<float>(dims, 11);
  auto in = fixtures::random_input(dims, 6, 12);
  auto trace = encode(in, p);
  for (const auto& layer : trace.layers)
    for (const auto& probs : layer.probs)
      for (Eigen::Index r = 0; r < probs.rows(); ++r)
        CHECK_THAT(double(probs.row(r).sum()), WithinAbs(1.0, 1e-6));
}

TEST_CASE("encoder matches an independent reimplementation") {
  for (bool norm : {true, false}) {
    auto dims = fixtures::small_dims(8, 2, 2);
    dims.layer_norm = norm;
    auto p = init_params<double>(dims, 21);
    rng::Stream rs(99);
    Mat<double> e(6, 8);
    for (Eigen::Index r = 0; r < 6; ++r)
      for (Eigen::Index c = 0; c < 8; ++c) e(r, c) = rs.real(-1, 1);

    auto trace = encode(e, p);
    Rows ref_e(6, std::vector<double>(8));
    for (Eigen::Index r = 0; r < 6; ++r)
      for (Eigen::Index c = 0; c < 8; ++c) ref_e[r][c] = e(r, c);
    Rows want = ref_encode(ref_e, p);
    double max_diff = 0;
    for (Eigen::Index r = 0; r < 6; ++r)
      for (Eigen::Index c = 0; c < 8; ++c)
        max_diff = std::max(
            max_diff, std::abs(trace.final_states()(r, c) - want[r][c]));
    CHECK(max_diff < 1e-6);
  }
}

TEST_CASE("subgraph representation depends only on the endpoint rows") {
  auto dims = fixtures::small_dims(8, 1, 2);
  auto p = init_params<double>(dims, 31);
  auto in = fixtures::random_input(dims, 6, 32);
  auto trace = encode(in, p);
  auto zt = subgraph_representation(trace, in.user_pos, in.item_pos, p);

  SECTION("zero head weights give a zero representation") {
    auto p0 = p;
    p0.mlp_w.setZero();
    p0.mlp_b.setZero();
    auto z0 = subgraph_representation(trace, in.user_pos, in.item_pos, p0);
    CHECK(z0.z.isZero());
  }

  SECTION("perturbing a non-endpoint row leaves z unchanged") {
    auto trace2 = trace;
    trace2.layers.back().f.row(2).array() += 7.5;
    auto z2 = subgraph_representation(trace2, in.user_pos, in.item_pos, p);
    CHECK((z2.z - zt.z).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("d=1 hand computation") {
    ModelDims d1 = fixtures::small_dims(1, 1, 1);
    auto q = make_params<double>(d1);
    q.mlp_w(0, 0) = 2.0;   // user row weight
    q.mlp_w(1, 0) = -3.0;  // item row weight
    q.mlp_b(0, 0) = 0.25;
    ActivationTrace<double> t;
    t.e.resize(2, 1);
    t.e << 0.5, -1.0;  // user state 0.5, item state -1.0
    auto z = subgraph_representation(t, 0, 1, q);
    // relu(2*0.5 + (-3)*(-1) + 0.25) = 4.25
    CHECK_THAT(z.z(0), WithinAbs(4.25, 1e-12));
  }
}

TEST_CASE("interaction score is a clamped sigmoid head") {
  auto dims = fixtures::small_dims(4, 1, 1);
  auto p = make_params<double>(dims);
  Vec<double> z(4);
  z << 1, 2, 3, 4;

  SECTION("zero weights score 0.5") {
    CHECK_THAT(interaction_score(z, p), WithinAbs(0.5, 1e-12));
  }

  SECTION("d=1: sigma(2)") {
    ModelDims d1 = fixtures::small_dims(1, 1, 1);
    auto q = make_params<double>(d1);
    q.score_w(0, 0) = 2.0;
    Vec<double> one(1);
    one << 1.0;
    CHECK_THAT(interaction_score(one, q), WithinAbs(0.880797, 1e-5));
  }

  SECTION("huge logits stay strictly inside (0,1)") {
    p.score_w.col(0).setConstant(1e6);
    const double s = interaction_score(z, p);
    CHECK(s < 1.0);
    CHECK(s > 0.0);
    CHECK_THAT(s, WithinAbs(1.0 / (1.0 + std::exp(-30.0)), 1e-15));
    p.score_w.col(0).setConstant(-1e6);
    CHECK(interaction_score(z, p) > 0.0);
  }
}

TEST_CASE("permuting elements and M_P rows permutes F^L identically") {
  auto dims = fixtures::small_dims(8, 2, 2);
  auto p = init_params<double>(dims, 41);
  auto in = fixtures::random_input(dims, 6, 42);
  auto trace = encode(in, p);

  // permutation of positions
  std::vector<std::uint16_t> perm = {3, 0, 5, 1, 4, 2};
  Input pin;
  pin.node.resize(6);
  pin.type.resize(6);
  pin.slot.resize(6);
  pin.precursors.resize(6);
  pin.id_masked.assign(6, 0);
  for (std::uint16_t t = 0; t < 6; ++t) {
    pin.node[perm[t]] = in.node[t];
    pin.type[perm[t]] = in.type[t];
    pin.slot[perm[t]] = in.slot[t];
    for (auto q : in.precursors[t])
      pin.precursors[perm[t]].push_back(perm[q]);
  }
  pin.user_pos = perm[in.user_pos];
  pin.item_pos = perm[in.item_pos];

  auto pp = p;  // permute the precursor table rows consistently
  for (std::uint16_t t = 0; t < 6; ++t)
    pp.precursor.row(perm[t]) = p.precursor.row(t);

  auto ptrace = encode(pin, pp);
  double max_diff = 0;
  for (std::uint16_t t = 0; t < 6; ++t)
    max_diff = std::max(max_diff, (ptrace.final_states().row(perm[t]) -
                                   trace.final_states().row(t))
                                      .cwiseAbs()
                                      .maxCoeff());
  CHECK(max_diff < 1e-9);
}

TEST_CASE("adam updates follow the closed form") {
  auto dims = fixtures::small_dims();
  auto p = init_params<float>(dims, 51);
  auto st = AdamState<float>::make(p, 0.01);

  SECTION("zero gradients leave parameters unchanged") {
    auto before = p;
    auto g = zeros_like(p);
    adam_step(p, g, st);
    auto a = p.tensors();
    auto b = before.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(st.step == 1);
  }

  SECTION("first step with unit gradients moves each coordinate by ~lr") {
    auto before = p;
    auto g = zeros_like(p);
    for (auto* t : g.tensors()) t->setOnes();
    adam_step(p, g, st);
    auto a = p.tensors();
    auto b = before.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) {
      Mat<float> delta = *b[i] - *a[i];
      CHECK_THAT(double(delta.minCoeff()), WithinAbs(0.01, 1e-4));
      CHECK_THAT(double(delta.maxCoeff()), WithinAbs(0.01, 1e-4));
    }
  }

  SECTION("identical runs stay identical") {
    auto p2 = p;
    auto st2 = AdamState<float>::make(p2, 0.01);
    for (int it = 0; it < 3; ++it) {
      auto g = zeros_like(p);
      for (auto* t : g.tensors()) t->setConstant(0.5f - 0.1f * it);
      adam_step(p, g, st);
      adam_step(p2, g, st2);
    }
    auto a = p.tensors();
    auto b = p2.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0f);
  }

  SECTION("shape mismatch is a contract error") {
    auto g = zeros_like(p);
    g.mtp_w.resize(1, 1);
    CHECK_THROWS_AS(adam_step(p, g, st), contract_error);
  }
}

TEST_CASE("checkpoints round-trip parameters, adam state and meta") {
  auto dims = fixtures::small_dims();
  auto p = init_params<float>(dims, 61);
  auto st = AdamState<float>::make(p, 0.002);
  st.step = 17;
  st.m[0].setConstant(0.25f);
  CheckpointMeta meta;
  meta.config_hash = 0xabcdef12;
  meta.root_seed = 99;
  meta.course = "advanced";
  meta.epoch = 4;

  toys::TempDir dir("ckpt");
  save_checkpoint(dir.file("m.bin"), p, &st, meta);

  CheckpointMeta got;
  AdamState<float> st2;
  auto q = load_checkpoint<float>(dir.file("m.bin"), &got, &st2);
  CHECK(got.config_hash == meta.config_hash);
  CHECK(got.course == "advanced");
  CHECK(got.epoch == 4);
  CHECK(st2.step == 17);
  CHECK(st2.learning_rate == 0.002);
  CHECK((st2.m[0].array() == 0.25f).all());
  auto a = p.tensors();
  auto b = q.tensors();
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK((*a[i] - *b[i]).cwiseAbs().maxCoeff() == 0.0f);

  SECTION("a different architecture is visible in the loaded dims") {
    auto other = fixtures::small_dims(16, 1, 2);
    auto p2 = init_params<float>(other, 3);
    save_checkpoint(dir.file("n.bin"), p2,
                    static_cast<AdamState<float>*>(nullptr), meta);
    CheckpointMeta m2;
    auto loaded = load_checkpoint<float>(dir.file("n.bin"), &m2);
    CHECK(loaded.dims.d == 16);
    CHECK_FALSE(loaded.dims == p.dims);
  }

  SECTION("corrupted payloads are rejected") {
    auto buf = io::read_file(dir.file("m.bin"));
    buf[buf.size() / 3] ^= 0x11;
    io::write_file(dir.file("x.bin"), buf);
    CHECK_THROWS_AS(load_checkpoint<float>(dir.file("x.bin"), nullptr),
                    corrupt_corpus_error);
  }
}

TEST_CASE("non-finite activations raise a numeric fault naming the layer") {
  auto dims = fixtures::small_dims(4, 2, 1);
  dims.layer_norm = false;
  auto p = init_params<double>(dims, 71);
  p.layers[1].w1.setConstant(std::numeric_limits<double>::infinity());
  Mat<double> e = Mat<double>::Ones(3, 4);
  try {
    encode(e, p);
    FAIL("expected numeric_fault");
  } catch (const numeric_fault& err) {
    CHECK(std::string(err.what()).find("layer 1") != std::string::npos);
  }
}
