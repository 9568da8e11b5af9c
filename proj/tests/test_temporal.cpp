#include <doctest.h>

#include <cmath>

#include "tsbench/temporal.hpp"
#include "test_util.hpp"

using namespace tsbench;
using tsbench_test::gradcheck;
using tsbench_test::project;

namespace {

BoundParams frozen(const ParameterStore& store) {
  BoundParams p;
  for (const auto& [k, param] : store.all()) {
    Tensor t = param.value;
    t.node = -1;
    t.requires_grad = false;
    p.emplace(k, t);
  }
  return p;
}

void zero_params(ParameterStore& store, const std::string& substr) {
  for (auto& [k, param] : store.entries())
    if (k.find(substr) != std::string::npos)
      for (auto& v : *param.value.data) v = 0.0;
}

TemporalConfig small_cfg(TemporalKind kind, int d_h = 8, int layers = 2) {
  TemporalConfig c;
  c.kind = kind;
  c.d_h = d_h;
  c.layers = layers;
  c.heads = 2;
  c.kernel = 3;
  return c;
}

}  // namespace

TEST_CASE("all kinds produce B x d_h and keep batch rows independent") {
  Rng rng(1);
  for (TemporalKind kind : {TemporalKind::Mlp, TemporalKind::Rnn, TemporalKind::Tcn,
                            TemporalKind::Transformer, TemporalKind::Pyraformer}) {
    TemporalConfig cfg = small_cfg(kind);
    ParameterStore store;
    Rng init(42);
    temporal_init(store, init, "tmp", 3, 8, cfg);
    auto p = frozen(store);
    Tape tape;
    Tensor x = rng.normal_tensor({4, 8, 3});
    Tensor out = temporal_forward(tape, p, "tmp", x, cfg, false, nullptr);
    REQUIRE(out.shape == Shape{4, 8});

    // Perturb row 2; rows 0,1,3 must be bitwise unchanged.
    Tensor x2 = x.clone();
    for (int t = 0; t < 8; ++t)
      for (int c = 0; c < 3; ++c) x2.at(2, t, c) += 0.37 * (t + c + 1);
    Tape tape2;
    Tensor out2 = temporal_forward(tape2, p, "tmp", x2, cfg, false, nullptr);
    for (int b : {0, 1, 3})
      for (int j = 0; j < 8; ++j) CHECK(out.at(b, j) == out2.at(b, j));
  }
}

// ---------------------------------------------------------------------------
// MLP

TEST_CASE("mlp: zero residual branches reduce to the input projection") {
  TemporalConfig cfg = small_cfg(TemporalKind::Mlp);
  ParameterStore store;
  Rng init(2);
  MlpTemporal::init(store, init, "tmp", 2, 4, cfg);
  zero_params(store, ".block");
  auto p = frozen(store);
  Tape tape;
  Rng rng(3);
  Tensor x = rng.normal_tensor({3, 4, 2});
  Tensor out = MlpTemporal::forward(tape, p, "tmp", x, cfg, false, nullptr);
  Tensor flat = reshape(tape, x, {3, 8});
  Tensor proj = affine(tape, flat, p.at("tmp.in.w"), p.at("tmp.in.b"));
  for (std::size_t i = 0; i < out.data->size(); ++i) CHECK((*out.data)[i] == (*proj.data)[i]);
}

TEST_CASE("mlp: gradcheck") {
  TemporalConfig cfg = small_cfg(TemporalKind::Mlp, 4, 1);
  ParameterStore store;
  Rng init(4);
  MlpTemporal::init(store, init, "tmp", 2, 3, cfg);
  Rng rng(5);
  Tensor x = rng.normal_tensor({2, 3, 2});
  Tensor r = rng.normal_tensor({2, 4});
  std::vector<std::string> names;
  std::vector<Tensor> in;
  for (const auto& [k, param] : store.all()) {
    names.push_back(k);
    in.push_back(param.value.clone());
  }
  auto build = [&, x, r](Tape& t, const std::vector<Tensor>& v) {
    BoundParams p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], v[i]);
    return project(t, MlpTemporal::forward(t, p, "tmp", x, cfg, false, nullptr), r);
  };
  CHECK(gradcheck(build, in) < 1e-4);
}

// ---------------------------------------------------------------------------
// GRU

TEST_CASE("rnn: all-zero weights give zero output") {
  TemporalConfig cfg = small_cfg(TemporalKind::Rnn, 8, 2);
  ParameterStore store;
  Rng init(6);
  GruTemporal::init(store, init, "tmp", 3, 0, cfg);
  zero_params(store, "tmp.");
  auto p = frozen(store);
  Tape tape;
  Rng rng(7);
  Tensor x = rng.normal_tensor({2, 5, 3});
  Tensor out = GruTemporal::forward(tape, p, "tmp", x, cfg, false, nullptr);
  for (double v : *out.data) CHECK(v == 0.0);
}

TEST_CASE("rnn: L=1 equals a single cell application") {
  TemporalConfig cfg = small_cfg(TemporalKind::Rnn, 6, 1);
  ParameterStore store;
  Rng init(8);
  GruTemporal::init(store, init, "tmp", 2, 0, cfg);
  auto p = frozen(store);
  Rng rng(9);
  Tensor x = rng.normal_tensor({3, 1, 2});
  Tape tape;
  Tensor out = GruTemporal::forward(tape, p, "tmp", x, cfg, false, nullptr);
  Tensor x0 = reshape(tape, x, {3, 2});
  Tensor h0({3, 6}, 0.0);
  Tensor cell = GruTemporal::cell(tape, p, "tmp.cell0", x0, h0);
  for (std::size_t i = 0; i < out.data->size(); ++i) CHECK((*out.data)[i] == (*cell.data)[i]);
}

TEST_CASE("rnn: gates forced to 1 reduce the cell to a tanh affine map") {
  TemporalConfig cfg = small_cfg(TemporalKind::Rnn, 4, 1);
  ParameterStore store;
  Rng init(10);
  GruTemporal::init(store, init, "tmp", 2, 0, cfg);
  // Saturate update/reset gates: huge positive biases, zero gate weights.
  for (const char* g : {"z", "r"}) {
    for (auto& v : *store.value(std::string("tmp.cell0.wx") + g).data) v = 0.0;
    for (auto& v : *store.value(std::string("tmp.cell0.wh") + g).data) v = 0.0;
    for (auto& v : *store.value(std::string("tmp.cell0.b") + g).data) v = 50.0;
  }
  auto p = frozen(store);
  Rng rng(11);
  Tensor x0 = rng.normal_tensor({2, 2});
  Tensor h = rng.normal_tensor({2, 4});
  Tape tape;
  Tensor out = GruTemporal::cell(tape, p, "tmp.cell0", x0, h);
  // Hand formula: h' = tanh(x Wxh + h Whh + bh).
  Tensor hand =
      tanh_op(tape, add(tape, add(tape, matmul(tape, x0, p.at("tmp.cell0.wxh")),
                                  matmul(tape, h, p.at("tmp.cell0.whh"))),
                        p.at("tmp.cell0.bh")));
  for (std::size_t i = 0; i < out.data->size(); ++i)
    CHECK((*out.data)[i] == doctest::Approx((*hand.data)[i]).epsilon(1e-9));
}

TEST_CASE("rnn: gradcheck") {
  TemporalConfig cfg = small_cfg(TemporalKind::Rnn, 3, 1);
  ParameterStore store;
  Rng init(12);
  GruTemporal::init(store, init, "tmp", 2, 0, cfg);
  Rng rng(13);
  Tensor x = rng.normal_tensor({2, 3, 2});
  Tensor r = rng.normal_tensor({2, 3});
  std::vector<std::string> names;
  std::vector<Tensor> in;
  for (const auto& [k, param] : store.all()) {
    names.push_back(k);
    in.push_back(param.value.clone());
  }
  auto build = [&, x, r](Tape& t, const std::vector<Tensor>& v) {
    BoundParams p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], v[i]);
    return project(t, GruTemporal::forward(t, p, "tmp", x, cfg, false, nullptr), r);
  };
  CHECK(gradcheck(build, in) < 1e-4);
}

// ---------------------------------------------------------------------------
// TCN

TEST_CASE("tcn: receptive field formula") {
  CHECK(TcnTemporal::receptive_field(3, 4) == 31);  // 1+(k-1)(2^L-1)
  CHECK(TcnTemporal::receptive_field(1, 5) == 1);
  CHECK(TcnTemporal::receptive_field(2, 1) == 2);
}

TEST_CASE("tcn: causality, perturbing step t never changes earlier features") {
  TemporalConfig cfg = small_cfg(TemporalKind::Tcn, 8, 3);
  ParameterStore store;
  Rng init(14);
  TcnTemporal::init(store, init, "tmp", 2, 0, cfg);
  auto p = frozen(store);
  Rng rng(15);
  Tensor x = rng.normal_tensor({2, 10, 2});
  Tape tape;
  Tensor base = TcnTemporal::features(tape, p, "tmp", x, cfg, false, nullptr);
  for (int t_perturb : {3, 7, 9}) {
    Tensor x2 = x.clone();
    for (int c = 0; c < 2; ++c) x2.at(1, t_perturb, c) += 5.0;
    Tape t2;
    Tensor f2 = TcnTemporal::features(t2, p, "tmp", x2, cfg, false, nullptr);
    for (int t = 0; t < t_perturb; ++t)
      for (int j = 0; j < 8; ++j) CHECK(f2.at(1, t, j) == base.at(1, t, j));  // bitwise
    bool changed = false;
    for (int j = 0; j < 8; ++j) changed = changed || f2.at(1, t_perturb, j) != base.at(1, t_perturb, j);
    CHECK(changed);
  }
}

TEST_CASE("tcn: kernel size 1 reduces to a per-step affine stack") {
  TemporalConfig cfg = small_cfg(TemporalKind::Tcn, 4, 2);
  cfg.kernel = 1;
  ParameterStore store;
  Rng init(16);
  TcnTemporal::init(store, init, "tmp", 1, 0, cfg);
  auto p = frozen(store);
  Rng rng(17);
  Tensor x = rng.normal_tensor({1, 6, 1});
  Tape tape;
  Tensor f = TcnTemporal::features(tape, p, "tmp", x, cfg, false, nullptr);
  // Per-step recomputation: position t depends only on x[t].
  for (int t = 0; t < 6; ++t) {
    Tensor xt({1, 1, 1}, {x.at(0, t, 0)});
    Tape t2;
    Tensor ft = TcnTemporal::features(t2, p, "tmp", xt, cfg, false, nullptr);
    for (int j = 0; j < 4; ++j) CHECK(f.at(0, t, j) == doctest::Approx(ft.at(0, 0, j)));
  }
}

TEST_CASE("tcn: gradcheck") {
  TemporalConfig cfg = small_cfg(TemporalKind::Tcn, 3, 2);
  ParameterStore store;
  Rng init(18);
  TcnTemporal::init(store, init, "tmp", 2, 0, cfg);
  Rng rng(19);
  Tensor x = rng.normal_tensor({2, 5, 2});
  Tensor r = rng.normal_tensor({2, 3});
  std::vector<std::string> names;
  std::vector<Tensor> in;
  for (const auto& [k, param] : store.all()) {
    names.push_back(k);
    in.push_back(param.value.clone());
  }
  auto build = [&, x, r](Tape& t, const std::vector<Tensor>& v) {
    BoundParams p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], v[i]);
    return project(t, TcnTemporal::forward(t, p, "tmp", x, cfg, false, nullptr), r);
  };
  CHECK(gradcheck(build, in) < 1e-4);
}

// ---------------------------------------------------------------------------
// Transformer

TEST_CASE("transformer: one-token attention is value/output projections alone") {
  ParameterStore store;
  Rng init(20);
  mha_init(store, init, "attn", 6);
  auto p = frozen(store);
  Rng rng(21);
  Tensor x = rng.normal_tensor({2, 1, 6});
  Tape tape;
  Tensor attn_w;
  Tensor out = multi_head_attention(tape, p, "attn", x, 2, {}, &attn_w);
  // softmax over one key = 1 exactly.
  for (double v : *attn_w.data) CHECK(v == 1.0);
  Tensor v_proj = affine(tape, x, p.at("attn.v.w"), p.at("attn.v.b"));
  Tensor hand = affine(tape, v_proj, p.at("attn.o.w"), p.at("attn.o.b"));
  for (std::size_t i = 0; i < out.data->size(); ++i)
    CHECK((*out.data)[i] == doctest::Approx((*hand.data)[i]).epsilon(1e-12));
}

TEST_CASE("transformer: attention rows sum to 1") {
  ParameterStore store;
  Rng init(22);
  mha_init(store, init, "attn", 8);
  auto p = frozen(store);
  Rng rng(23);
  Tensor x = rng.normal_tensor({2, 5, 8});
  Tape tape;
  Tensor attn_w;
  multi_head_attention(tape, p, "attn", x, 4, {}, &attn_w);
  REQUIRE(attn_w.shape == Shape{2, 4, 5, 5});
  for (int b = 0; b < 2; ++b)
    for (int h = 0; h < 4; ++h)
      for (int i = 0; i < 5; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += attn_w.at(b, h, i, j);
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
}

TEST_CASE("transformer: masked entries receive exactly zero weight") {
  ParameterStore store;
  Rng init(24);
  mha_init(store, init, "attn", 4);
  auto p = frozen(store);
  Rng rng(25);
  Tensor x = rng.normal_tensor({1, 4, 4});
  Tensor mask({4, 4}, 0.0);
  mask.at(0, 2) = kAttnMaskOff;
  mask.at(3, 1) = kAttnMaskOff;
  Tape tape;
  Tensor attn_w;
  multi_head_attention(tape, p, "attn", x, 2, mask, &attn_w);
  for (int h = 0; h < 2; ++h) {
    CHECK(attn_w.at(0, h, 0, 2) == 0.0);
    CHECK(attn_w.at(0, h, 3, 1) == 0.0);
  }
}

TEST_CASE("transformer: gradcheck through two layers") {
  TemporalConfig cfg = small_cfg(TemporalKind::Transformer, 4, 2);
  cfg.heads = 2;
  ParameterStore store;
  Rng init(26);
  TransformerTemporal::init(store, init, "tmp", 3, 3, cfg);
  Rng rng(27);
  Tensor x = rng.normal_tensor({2, 3, 3});
  Tensor r = rng.normal_tensor({2, 4});
  std::vector<std::string> names;
  std::vector<Tensor> in;
  for (const auto& [k, param] : store.all()) {
    names.push_back(k);
    in.push_back(param.value.clone());
  }
  auto build = [&, x, r](Tape& t, const std::vector<Tensor>& v) {
    BoundParams p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], v[i]);
    return project(t, TransformerTemporal::forward(t, p, "tmp", x, cfg, false, nullptr), r);
  };
  CHECK(gradcheck(build, in) < 2e-4);
}

// ---------------------------------------------------------------------------
// Pyraformer

TEST_CASE("pyraformer: mean-pool of [1,3] with factor 2 is [2]") {
  Tape tape;
  Tensor x({1, 2, 1}, {1.0, 3.0});
  Tensor out = mean_pool1d(tape, x, 2);
  REQUIRE(out.shape == Shape{1, 1, 1});
  CHECK(out.at(0, 0, 0) == doctest::Approx(2.0));
}

TEST_CASE("pyraformer: mask matches a brute-force construction for L=8, w=1") {
  const int L = 8, w = 1;
  const std::vector<int> factors = {1, 2, 4};
  Tensor mask = PyraTemporal::attention_mask(L, factors, w);
  // Independent brute force over (scale, position) token pairs.
  struct Tok { int scale, pos; };
  std::vector<Tok> toks;
  const int sizes[3] = {8, 4, 2};
  for (int s = 0; s < 3; ++s)
    for (int p = 0; p < sizes[s]; ++p) toks.push_back({s, p});
  REQUIRE(mask.shape == Shape{14, 14});
  for (std::size_t i = 0; i < toks.size(); ++i)
    for (std::size_t j = 0; j < toks.size(); ++j) {
      bool allowed = false;
      if (toks[i].scale == toks[j].scale && std::abs(toks[i].pos - toks[j].pos) <= w) allowed = true;
      // Parent/child between adjacent scales: child pos p <-> parent pos p/2.
      if (toks[j].scale == toks[i].scale + 1 && toks[j].pos == toks[i].pos / 2) allowed = true;
      if (toks[i].scale == toks[j].scale + 1 && toks[i].pos == toks[j].pos / 2) allowed = true;
      const double expect = allowed ? 0.0 : kAttnMaskOff;
      CHECK(mask.at(static_cast<int>(i), static_cast<int>(j)) == expect);
    }
}

TEST_CASE("pyraformer: pooling factor 1 only reduces to windowed self-attention") {
  const Tensor mask = PyraTemporal::attention_mask(6, {1}, 2);
  REQUIRE(mask.shape == Shape{6, 6});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(mask.at(i, j) == (std::abs(i - j) <= 2 ? 0.0 : kAttnMaskOff));
}

TEST_CASE("pyraformer: sequence shorter than the coarsest factor falls back to full attention") {
  const auto lay = PyraTemporal::layout_for(3, {1, 2, 4});
  CHECK(lay.factors == std::vector<int>{1, 2});
  CHECK(lay.fallback_full);
  const Tensor mask = PyraTemporal::attention_mask(3, {1, 2, 4}, 1);
  // Within-scale pairs are all allowed under the fallback.
  CHECK(mask.at(0, 2) == 0.0);
  const TemporalConfig cfg = [] {
    TemporalConfig c = small_cfg(TemporalKind::Pyraformer, 4, 1);
    c.heads = 2;
    return c;
  }();
  ParameterStore store;
  Rng init(28);
  PyraTemporal::init(store, init, "tmp", 2, 3, cfg);
  auto p = frozen(store);
  Rng rng(29);
  Tensor x = rng.normal_tensor({2, 3, 2});
  Tape tape;
  Tensor out = PyraTemporal::forward(tape, p, "tmp", x, cfg, false, nullptr);
  CHECK(out.shape == Shape{2, 4});
}

TEST_CASE("pyraformer: gradcheck") {
  TemporalConfig cfg = small_cfg(TemporalKind::Pyraformer, 4, 1);
  cfg.heads = 2;
  cfg.pyramid = {1, 2};
  cfg.local_window = 1;
  ParameterStore store;
  Rng init(30);
  PyraTemporal::init(store, init, "tmp", 2, 4, cfg);
  Rng rng(31);
  Tensor x = rng.normal_tensor({2, 4, 2});
  Tensor r = rng.normal_tensor({2, 4});
  std::vector<std::string> names;
  std::vector<Tensor> in;
  for (const auto& [k, param] : store.all()) {
    names.push_back(k);
    in.push_back(param.value.clone());
  }
  auto build = [&, x, r](Tape& t, const std::vector<Tensor>& v) {
    BoundParams p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], v[i]);
    return project(t, PyraTemporal::forward(t, p, "tmp", x, cfg, false, nullptr), r);
  };
  CHECK(gradcheck(build, in) < 2e-4);
}
