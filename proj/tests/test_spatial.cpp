#include <doctest.h>

#include <cmath>

#include "tsbench/spatial.hpp"
#include "test_util.hpp"

using namespace tsbench;

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

}  // namespace

TEST_CASE("spatial attention: N=1 reduces to residual + out(value(h)) + ff") {
  SpatialConfig cfg;
  cfg.kind = SpatialKind::Attention;
  cfg.heads = 2;
  cfg.d_h = 6;
  ParameterStore store;
  Rng init(1);
  spatial_init(store, init, "sp", cfg);
  auto p = frozen(store);
  Rng rng(2);
  Tensor h = rng.normal_tensor({3, 6});  // three windows of a single series
  Tape tape;
  Tensor out = spatial_forward(tape, p, "sp", h, 1, cfg);
  // Hand evaluation: attention weight over one series is exactly 1.
  Tensor x3 = reshape(tape, h, {3, 1, 6});
  Tensor v = affine(tape, x3, p.at("sp.attn.v.w"), p.at("sp.attn.v.b"));
  Tensor att = affine(tape, v, p.at("sp.attn.o.w"), p.at("sp.attn.o.b"));
  Tensor y = add(tape, x3, att);
  Tensor ff = affine(tape, gelu(tape, affine(tape, y, p.at("sp.ff1.w"), p.at("sp.ff1.b"))),
                     p.at("sp.ff2.w"), p.at("sp.ff2.b"));
  Tensor hand = reshape(tape, add(tape, y, ff), {3, 6});
  for (std::size_t i = 0; i < out.data->size(); ++i)
    CHECK((*out.data)[i] == doctest::Approx((*hand.data)[i]).epsilon(1e-12));
}

TEST_CASE("spatial attention: permutation equivariance over series") {
  SpatialConfig cfg;
  cfg.kind = SpatialKind::Attention;
  cfg.heads = 2;
  cfg.d_h = 8;
  ParameterStore store;
  Rng init(3);
  spatial_init(store, init, "sp", cfg);
  auto p = frozen(store);
  Rng rng(4);
  const int N = 5;
  Tensor h = rng.normal_tensor({N, 8});
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  Tensor hp({N, 8});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < 8; ++j) hp.at(i, j) = h.at(perm[static_cast<std::size_t>(i)], j);
  Tape tape;
  Tensor out = spatial_forward(tape, p, "sp", h, N, cfg);
  Tensor outp = spatial_forward(tape, p, "sp", hp, N, cfg);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(outp.at(i, j) == doctest::Approx(out.at(perm[static_cast<std::size_t>(i)], j)).epsilon(1e-9));
}

TEST_CASE("spatial attention: rows sum to 1 and all-equal inputs give all-equal outputs") {
  SpatialConfig cfg;
  cfg.kind = SpatialKind::Attention;
  cfg.heads = 4;
  cfg.d_h = 8;
  ParameterStore store;
  Rng init(5);
  spatial_init(store, init, "sp", cfg);
  auto p = frozen(store);
  Rng rng(6);
  const int N = 6;
  Tensor h = rng.normal_tensor({2 * N, 8});
  Tape tape;
  Tensor attn;
  spatial_forward(tape, p, "sp", h, N, cfg, &attn);
  REQUIRE(attn.shape == Shape{2, 4, N, N});
  for (int g = 0; g < 2; ++g)
    for (int hd = 0; hd < 4; ++hd)
      for (int i = 0; i < N; ++i) {
        double s = 0.0;
        for (int j = 0; j < N; ++j) s += attn.at(g, hd, i, j);
        CHECK(std::abs(s - 1.0) < 1e-6);
      }

  Tensor same({N, 8});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < 8; ++j) same.at(i, j) = 0.1 * j - 0.3;
  Tensor out = spatial_forward(tape, p, "sp", same, N, cfg);
  for (int i = 1; i < N; ++i)
    for (int j = 0; j < 8; ++j) CHECK(out.at(i, j) == doctest::Approx(out.at(0, j)));
}

TEST_CASE("spatial attention: ungrouped batch and empty groups rejected") {
  SpatialConfig cfg;
  cfg.kind = SpatialKind::Attention;
  cfg.heads = 2;
  cfg.d_h = 4;
  ParameterStore store;
  Rng init(7);
  spatial_init(store, init, "sp", cfg);
  auto p = frozen(store);
  Rng rng(8);
  Tensor h = rng.normal_tensor({5, 4});
  Tape tape;
  CHECK_THROWS_AS(spatial_forward(tape, p, "sp", h, 3, cfg), std::invalid_argument);
  CHECK_THROWS_AS(spatial_forward(tape, p, "sp", h, 0, cfg), std::invalid_argument);
}

TEST_CASE("spatial mlp: strict per-series locality under random perturbations") {
  SpatialConfig cfg;
  cfg.kind = SpatialKind::Mlp;
  cfg.d_h = 8;
  ParameterStore store;
  Rng init(9);
  spatial_init(store, init, "sp", cfg);
  auto p = frozen(store);
  Rng rng(10);
  const int N = 6;
  Tensor h = rng.normal_tensor({N, 8});
  Tape tape;
  Tensor base = spatial_forward(tape, p, "sp", h, N, cfg);
  for (int rep = 0; rep < 100; ++rep) {
    const int j = static_cast<int>(rng.uniform_int(0, N - 1));
    Tensor h2 = h.clone();
    for (int c = 0; c < 8; ++c) h2.at(j, c) += rng.normal(0.0, 2.0);
    Tape t2;
    Tensor out = spatial_forward(t2, p, "sp", h2, N, cfg);
    for (int i = 0; i < N; ++i) {
      if (i == j) continue;
      for (int c = 0; c < 8; ++c) CHECK(out.at(i, c) == base.at(i, c));  // bitwise
    }
  }
}

TEST_CASE("spatial mlp: zero weights give zero pre-residual branch, shape preserved") {
  SpatialConfig cfg;
  cfg.kind = SpatialKind::Mlp;
  cfg.d_h = 4;
  ParameterStore store;
  Rng init(11);
  spatial_init(store, init, "sp", cfg);
  for (auto& [k, param] : store.entries())
    for (auto& v : *param.value.data) v = 0.0;
  auto p = frozen(store);
  Rng rng(12);
  Tensor h = rng.normal_tensor({3, 4});
  Tape tape;
  Tensor out = spatial_forward(tape, p, "sp", h, 1, cfg);
  REQUIRE(out.shape == h.shape);
  for (std::size_t i = 0; i < h.data->size(); ++i) CHECK((*out.data)[i] == (*h.data)[i]);
}

TEST_CASE("spatial none: exact identity, bitwise") {
  SpatialConfig cfg;  // kind = None
  ParameterStore store;
  Rng init(13);
  spatial_init(store, init, "sp", cfg);
  CHECK(store.param_count() == 0);
  auto p = frozen(store);
  Rng rng(14);
  Tensor h = rng.normal_tensor({7, 5});
  Tape tape;
  Tensor out = spatial_forward(tape, p, "sp", h, 7, cfg);
  CHECK(out.data == h.data);  // same storage: the stage is the identity
}
