#pragma once

// Spatial stage: operators over the series axis. Attention mixes information
// across the N series of one time window; the MLP replacement applies the
// same feedforward to every series independently (no cross-series paths);
// `none` is the identity.

#include <stdexcept>
#include <string>

#include "tsbench/temporal.hpp"

namespace tsbench {

enum class SpatialKind { None, Attention, Mlp };

inline const char* to_string(SpatialKind k) {
  switch (k) {
    case SpatialKind::None: return "none";
    case SpatialKind::Attention: return "attention";
    case SpatialKind::Mlp: return "mlp";
  }
  return "?";
}

struct SpatialConfig {
  SpatialKind kind = SpatialKind::None;
  int heads = 4;
  int d_h = 64;
};

inline void spatial_init(ParameterStore& store, Rng& rng, const std::string& prefix,
                         const SpatialConfig& cfg) {
  if (cfg.kind == SpatialKind::None) return;
  if (cfg.kind == SpatialKind::Attention) mha_init(store, rng, prefix + ".attn", cfg.d_h);
  detail::ffn_init(store, rng, prefix, cfg.d_h, 2 * cfg.d_h);
}

// hidden (G*N, d_h) with rows grouped by window; returns the same shape.
inline Tensor spatial_forward(Tape& tape, const BoundParams& p, const std::string& prefix,
                              const Tensor& hidden, int group_size, const SpatialConfig& cfg,
                              Tensor* attn_out = nullptr) {
  if (cfg.kind == SpatialKind::None) return hidden;
  const int B = hidden.dim(0), d = hidden.dim(1);
  if (cfg.kind == SpatialKind::Mlp) {
    // Residual feedforward per series; rows never interact.
    return add(tape, hidden, detail::ffn(tape, p, prefix, hidden));
  }
  if (group_size < 1 || B % group_size != 0)
    throw std::invalid_argument("spatial_attention: batch of " + std::to_string(B) +
                                " rows is not grouped by " + std::to_string(group_size) + " series");
  const int groups = B / group_size;
  Tensor x = reshape(tape, hidden, {groups, group_size, d});
  Tensor y = add(tape, x, multi_head_attention(tape, p, prefix + ".attn", x, cfg.heads, {}, attn_out));
  Tensor z = add(tape, y, detail::ffn(tape, p, prefix, y));
  return reshape(tape, z, {B, d});
}

}  // namespace tsbench
