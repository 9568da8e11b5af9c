#pragma once

// Temporal stage: five interchangeable operators mapping an encoded sequence
// (B, L, d_in) to one hidden vector per batch row (B, d_h).

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbench/autodiff.hpp"
#include "tsbench/optim.hpp"
#include "tsbench/preprocess.hpp"

namespace tsbench {

enum class TemporalKind { Mlp, Rnn, Tcn, Transformer, Pyraformer };

inline const char* to_string(TemporalKind k) {
  switch (k) {
    case TemporalKind::Mlp: return "mlp";
    case TemporalKind::Rnn: return "rnn";
    case TemporalKind::Tcn: return "tcn";
    case TemporalKind::Transformer: return "transformer";
    case TemporalKind::Pyraformer: return "pyraformer";
  }
  return "?";
}

struct TemporalConfig {
  TemporalKind kind = TemporalKind::Mlp;
  int d_h = 64;
  int layers = 2;
  double dropout = 0.0;
  int kernel = 3;                     // tcn only
  int heads = 4;                      // attention kinds only
  std::vector<int> pyramid = {1, 2, 4};  // pyraformer only
  int local_window = 4;               // pyraformer only
};

inline constexpr double kAttnMaskOff = -1e30;

// ---------------------------------------------------------------------------
// Multi-head self-attention over the middle axis of (B, L, d_h). `mask` is an
// additive (L, L) constant of 0 / kAttnMaskOff entries (empty = no mask).
// When `attn_out` is given, the softmax weights (B, heads, L, L) are copied
// out for inspection.

inline void mha_init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_h) {
  for (const char* nm : {"q", "k", "v", "o"}) {
    store.add_shared(prefix + "." + nm + ".w", init_fan_in(rng, {d_h, d_h}, d_h));
    store.add_shared(prefix + "." + nm + ".b", Tensor({d_h}, 0.0));
  }
}

inline Tensor multi_head_attention(Tape& tape, const BoundParams& p, const std::string& prefix,
                                   const Tensor& x, int heads, const Tensor& mask = {},
                                   Tensor* attn_out = nullptr) {
  const int B = x.dim(0), L = x.dim(1), d = x.dim(2);
  if (d % heads != 0)
    throw std::invalid_argument("attention: hidden size " + std::to_string(d) +
                                " not divisible by head count " + std::to_string(heads));
  const int dk = d / heads;
  auto split_heads = [&](const Tensor& t) {
    return transpose(tape, reshape(tape, t, {B, L, heads, dk}), 1, 2);  // B,h,L,dk
  };
  Tensor q = split_heads(affine(tape, x, p.at(prefix + ".q.w"), p.at(prefix + ".q.b")));
  Tensor k = split_heads(affine(tape, x, p.at(prefix + ".k.w"), p.at(prefix + ".k.b")));
  Tensor v = split_heads(affine(tape, x, p.at(prefix + ".v.w"), p.at(prefix + ".v.b")));
  Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k, 2, 3)), 1.0 / std::sqrt(dk));
  if (mask.numel() > 0) scores = add(tape, scores, mask);
  Tensor attn = softmax(tape, scores, 3);
  if (attn_out) *attn_out = attn.clone();
  Tensor ctx = transpose(tape, matmul(tape, attn, v), 1, 2);  // B,L,h,dk
  Tensor merged = reshape(tape, ctx, {B, L, d});
  return affine(tape, merged, p.at(prefix + ".o.w"), p.at(prefix + ".o.b"));
}

namespace detail {
inline Tensor ffn(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x) {
  Tensor h = gelu(tape, affine(tape, x, p.at(prefix + ".ff1.w"), p.at(prefix + ".ff1.b")));
  return affine(tape, h, p.at(prefix + ".ff2.w"), p.at(prefix + ".ff2.b"));
}
inline void ffn_init(ParameterStore& store, Rng& rng, const std::string& prefix, int d, int d_ff) {
  store.add_shared(prefix + ".ff1.w", init_fan_in(rng, {d, d_ff}, d));
  store.add_shared(prefix + ".ff1.b", Tensor({d_ff}, 0.0));
  store.add_shared(prefix + ".ff2.w", init_fan_in(rng, {d_ff, d}, d_ff));
  store.add_shared(prefix + ".ff2.b", Tensor({d}, 0.0));
}
inline Tensor maybe_dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng* rng) {
  if (!training || rate <= 0.0 || !rng) return x;
  return dropout(tape, x, rate, *rng);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// MLP: flatten time, project, residual blocks (affine -> relu -> affine + skip).

struct MlpTemporal {
  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int L,
                   const TemporalConfig& cfg) {
    store.add_shared(prefix + ".in.w", init_fan_in(rng, {L * d_in, cfg.d_h}, static_cast<long long>(L) * d_in));
    store.add_shared(prefix + ".in.b", Tensor({cfg.d_h}, 0.0));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".block" + std::to_string(l);
      store.add_shared(b + ".w1", init_fan_in(rng, {cfg.d_h, cfg.d_h}, cfg.d_h));
      store.add_shared(b + ".b1", Tensor({cfg.d_h}, 0.0));
      store.add_shared(b + ".w2", init_fan_in(rng, {cfg.d_h, cfg.d_h}, cfg.d_h));
      store.add_shared(b + ".b2", Tensor({cfg.d_h}, 0.0));
    }
  }

  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const TemporalConfig& cfg, bool training, Rng* rng) {
    const int B = x.dim(0);
    Tensor flat = reshape(tape, x, {B, x.dim(1) * x.dim(2)});
    Tensor h = affine(tape, flat, p.at(prefix + ".in.w"), p.at(prefix + ".in.b"));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".block" + std::to_string(l);
      Tensor branch = relu(tape, affine(tape, h, p.at(b + ".w1"), p.at(b + ".b1")));
      branch = affine(tape, branch, p.at(b + ".w2"), p.at(b + ".b2"));
      branch = detail::maybe_dropout(tape, branch, cfg.dropout, training, rng);
      h = add(tape, h, branch);
    }
    return h;
  }
};

// ---------------------------------------------------------------------------
// Gated recurrent unit stack; the hidden state after the last step is the
// sequence representation.

struct GruTemporal {
  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int /*L*/,
                   const TemporalConfig& cfg) {
    int din = d_in;
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".cell" + std::to_string(l);
      for (const char* g : {"z", "r", "h"}) {
        store.add_shared(b + ".wx" + g, init_fan_in(rng, {din, cfg.d_h}, din));
        store.add_shared(b + ".wh" + g, init_fan_in(rng, {cfg.d_h, cfg.d_h}, cfg.d_h));
        store.add_shared(b + ".b" + g, Tensor({cfg.d_h}, 0.0));
      }
      din = cfg.d_h;
    }
  }

  // One gate update: h' = (1 - z) * h + z * tanh(x Wxh + (r*h) Whh + bh).
  static Tensor cell(Tape& tape, const BoundParams& p, const std::string& b, const Tensor& x_t,
                     const Tensor& h) {
    const Tensor one({1}, {1.0});
    Tensor z = sigmoid(tape, add(tape, add(tape, matmul(tape, x_t, p.at(b + ".wxz")),
                                           matmul(tape, h, p.at(b + ".whz"))),
                                 p.at(b + ".bz")));
    Tensor r = sigmoid(tape, add(tape, add(tape, matmul(tape, x_t, p.at(b + ".wxr")),
                                           matmul(tape, h, p.at(b + ".whr"))),
                                 p.at(b + ".br")));
    Tensor hh = tanh_op(tape, add(tape, add(tape, matmul(tape, x_t, p.at(b + ".wxh")),
                                            matmul(tape, mul(tape, r, h), p.at(b + ".whh"))),
                                  p.at(b + ".bh")));
    Tensor keep = add(tape, scale(tape, z, -1.0), one);  // 1 - z
    return add(tape, mul(tape, keep, h), mul(tape, z, hh));
  }

  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const TemporalConfig& cfg, bool training, Rng* rng) {
    const int B = x.dim(0), L = x.dim(1);
    Tensor seq = x;
    Tensor h_last;
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".cell" + std::to_string(l);
      Tensor h({B, cfg.d_h}, 0.0);
      std::vector<Tensor> outs;
      outs.reserve(static_cast<std::size_t>(L));
      for (int t = 0; t < L; ++t) {
        Tensor x_t = reshape(tape, slice(tape, seq, 1, t, 1), {B, seq.dim(2)});
        h = cell(tape, p, b, x_t, h);
        if (l + 1 < cfg.layers) outs.push_back(reshape(tape, h, {B, 1, cfg.d_h}));
      }
      h_last = h;
      if (l + 1 < cfg.layers) {
        seq = concat(tape, outs, 1);
        seq = detail::maybe_dropout(tape, seq, cfg.dropout, training, rng);
      }
    }
    return h_last;
  }
};

// ---------------------------------------------------------------------------
// TCN: causal convolutions with dilation 2^l at layer l, one residual block
// per layer; the last step's representation is returned.

struct TcnTemporal {
  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int /*L*/,
                   const TemporalConfig& cfg) {
    store.add_shared(prefix + ".in.w", init_fan_in(rng, {d_in, cfg.d_h}, d_in));
    store.add_shared(prefix + ".in.b", Tensor({cfg.d_h}, 0.0));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".conv" + std::to_string(l);
      store.add_shared(b + ".k", init_fan_in(rng, {cfg.kernel, cfg.d_h, cfg.d_h},
                                             static_cast<long long>(cfg.kernel) * cfg.d_h));
      store.add_shared(b + ".b", Tensor({cfg.d_h}, 0.0));
    }
  }

  static int receptive_field(int kernel, int layers) {
    return 1 + (kernel - 1) * ((1 << layers) - 1);
  }

  // Full per-step features (B, L, d_h); used directly by the causality tests.
  static Tensor features(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                         const TemporalConfig& cfg, bool training, Rng* rng) {
    Tensor h = affine(tape, x, p.at(prefix + ".in.w"), p.at(prefix + ".in.b"));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".conv" + std::to_string(l);
      Tensor branch = conv1d(tape, h, p.at(b + ".k"), 1, 1 << l, /*causal=*/true);
      branch = relu(tape, add(tape, branch, p.at(b + ".b")));
      branch = detail::maybe_dropout(tape, branch, cfg.dropout, training, rng);
      h = add(tape, h, branch);
    }
    return h;
  }

  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const TemporalConfig& cfg, bool training, Rng* rng) {
    Tensor h = features(tape, p, prefix, x, cfg, training, rng);
    const int B = h.dim(0), L = h.dim(1);
    return reshape(tape, slice(tape, h, 1, L - 1, 1), {B, cfg.d_h});
  }
};

// ---------------------------------------------------------------------------
// Transformer encoder over patch tokens: learned positional encodings,
// pre-norm blocks, then flatten + project.

struct TransformerTemporal {
  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int L,
                   const TemporalConfig& cfg) {
    store.add_shared(prefix + ".in.w", init_fan_in(rng, {d_in, cfg.d_h}, d_in));
    store.add_shared(prefix + ".in.b", Tensor({cfg.d_h}, 0.0));
    store.add_shared(prefix + ".pos", rng.normal_tensor({L, cfg.d_h}, 0.0, 0.02));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".layer" + std::to_string(l);
      store.add_shared(b + ".ln1.g", Tensor({cfg.d_h}, 1.0));
      store.add_shared(b + ".ln1.b", Tensor({cfg.d_h}, 0.0));
      mha_init(store, rng, b + ".attn", cfg.d_h);
      store.add_shared(b + ".ln2.g", Tensor({cfg.d_h}, 1.0));
      store.add_shared(b + ".ln2.b", Tensor({cfg.d_h}, 0.0));
      detail::ffn_init(store, rng, b, cfg.d_h, 2 * cfg.d_h);
    }
    store.add_shared(prefix + ".out.w", init_fan_in(rng, {L * cfg.d_h, cfg.d_h},
                                                    static_cast<long long>(L) * cfg.d_h));
    store.add_shared(prefix + ".out.b", Tensor({cfg.d_h}, 0.0));
  }

  static Tensor encode(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                       const TemporalConfig& cfg, bool training, Rng* rng,
                       std::vector<Tensor>* attn_maps = nullptr) {
    Tensor h = affine(tape, x, p.at(prefix + ".in.w"), p.at(prefix + ".in.b"));
    h = add(tape, h, p.at(prefix + ".pos"));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".layer" + std::to_string(l);
      Tensor n1 = layer_norm(tape, h, p.at(b + ".ln1.g"), p.at(b + ".ln1.b"));
      Tensor attn_w;
      Tensor a = multi_head_attention(tape, p, b + ".attn", n1, cfg.heads, {},
                                      attn_maps ? &attn_w : nullptr);
      if (attn_maps) attn_maps->push_back(attn_w);
      h = add(tape, h, detail::maybe_dropout(tape, a, cfg.dropout, training, rng));
      Tensor n2 = layer_norm(tape, h, p.at(b + ".ln2.g"), p.at(b + ".ln2.b"));
      h = add(tape, h, detail::maybe_dropout(tape, detail::ffn(tape, p, b, n2), cfg.dropout, training, rng));
    }
    return h;
  }

  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const TemporalConfig& cfg, bool training, Rng* rng) {
    Tensor h = encode(tape, p, prefix, x, cfg, training, rng);
    const int B = h.dim(0);
    Tensor flat = reshape(tape, h, {B, h.dim(1) * h.dim(2)});
    return affine(tape, flat, p.at(prefix + ".out.w"), p.at(prefix + ".out.b"));
  }
};

// ---------------------------------------------------------------------------
// Pyramidal attention: mean-pooled scales, one token sequence with a mask
// restricting attention to a local window per scale plus parent/child links,
// then per-scale mean summaries.

struct PyraTemporal {
  struct Layout {
    std::vector<int> factors;  // factors actually used (<= L)
    std::vector<int> sizes;    // token count per scale
    std::vector<int> offsets;  // token offset per scale
    int total = 0;
    bool fallback_full = false;
  };

  static Layout layout_for(int L, const std::vector<int>& factors) {
    Layout lay;
    for (int f : factors)
      if (f <= L) lay.factors.push_back(f);
    if (lay.factors.empty()) lay.factors.push_back(1);
    lay.fallback_full = lay.factors.size() != factors.size();
    for (int f : lay.factors) {
      lay.offsets.push_back(lay.total);
      const int n = (L + f - 1) / f;
      lay.sizes.push_back(n);
      lay.total += n;
    }
    return lay;
  }

  // Additive mask over the concatenated token sequence. Token (s, p) attends
  // to (s, q) with |p-q| <= w and to parent/child tokens at adjacent scales.
  static Tensor attention_mask(int L, const std::vector<int>& factors, int w) {
    const Layout lay = layout_for(L, factors);
    const int n = lay.total;
    const int eff_w = lay.fallback_full ? n : w;
    Tensor mask({n, n}, kAttnMaskOff);
    auto allow = [&](int i, int j) { mask.at(i, j) = 0.0; };
    for (std::size_t s = 0; s < lay.factors.size(); ++s) {
      for (int p = 0; p < lay.sizes[s]; ++p) {
        const int tok = lay.offsets[s] + p;
        for (int q = 0; q < lay.sizes[s]; ++q)
          if (std::abs(p - q) <= eff_w) allow(tok, lay.offsets[s] + q);
        if (s + 1 < lay.factors.size()) {
          const int parent = p * lay.factors[s] / lay.factors[s + 1];
          if (parent < lay.sizes[s + 1]) {
            allow(tok, lay.offsets[s + 1] + parent);
            allow(lay.offsets[s + 1] + parent, tok);
          }
        }
      }
    }
    return mask;
  }

  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int L,
                   const TemporalConfig& cfg) {
    const Layout lay = layout_for(L, cfg.pyramid);
    store.add_shared(prefix + ".in.w", init_fan_in(rng, {d_in, cfg.d_h}, d_in));
    store.add_shared(prefix + ".in.b", Tensor({cfg.d_h}, 0.0));
    store.add_shared(prefix + ".pos", rng.normal_tensor({lay.total, cfg.d_h}, 0.0, 0.02));
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".layer" + std::to_string(l);
      store.add_shared(b + ".ln1.g", Tensor({cfg.d_h}, 1.0));
      store.add_shared(b + ".ln1.b", Tensor({cfg.d_h}, 0.0));
      mha_init(store, rng, b + ".attn", cfg.d_h);
      store.add_shared(b + ".ln2.g", Tensor({cfg.d_h}, 1.0));
      store.add_shared(b + ".ln2.b", Tensor({cfg.d_h}, 0.0));
      detail::ffn_init(store, rng, b, cfg.d_h, 2 * cfg.d_h);
    }
    store.add_shared(prefix + ".scales.w",
                     init_fan_in(rng, {static_cast<int>(lay.factors.size()) * cfg.d_h, cfg.d_h},
                                 static_cast<long long>(lay.factors.size()) * cfg.d_h));
    store.add_shared(prefix + ".scales.b", Tensor({cfg.d_h}, 0.0));
  }

  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const TemporalConfig& cfg, bool training, Rng* rng,
                        std::vector<Tensor>* attn_maps = nullptr) {
    const int B = x.dim(0), L = x.dim(1);
    const Layout lay = layout_for(L, cfg.pyramid);
    Tensor h = affine(tape, x, p.at(prefix + ".in.w"), p.at(prefix + ".in.b"));
    std::vector<Tensor> scales;
    for (int f : lay.factors) scales.push_back(f == 1 ? h : mean_pool1d(tape, h, f));
    Tensor tokens = lay.factors.size() == 1 ? scales[0] : concat(tape, scales, 1);
    tokens = add(tape, tokens, p.at(prefix + ".pos"));
    const Tensor mask = attention_mask(L, cfg.pyramid, cfg.local_window);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string b = prefix + ".layer" + std::to_string(l);
      Tensor n1 = layer_norm(tape, tokens, p.at(b + ".ln1.g"), p.at(b + ".ln1.b"));
      Tensor attn_w;
      Tensor a = multi_head_attention(tape, p, b + ".attn", n1, cfg.heads, mask,
                                      attn_maps ? &attn_w : nullptr);
      if (attn_maps) attn_maps->push_back(attn_w);
      tokens = add(tape, tokens, detail::maybe_dropout(tape, a, cfg.dropout, training, rng));
      Tensor n2 = layer_norm(tape, tokens, p.at(b + ".ln2.g"), p.at(b + ".ln2.b"));
      tokens = add(tape, tokens,
                   detail::maybe_dropout(tape, detail::ffn(tape, p, b, n2), cfg.dropout, training, rng));
    }
    std::vector<Tensor> summaries;
    for (std::size_t s = 0; s < lay.factors.size(); ++s)
      summaries.push_back(mean_axis(tape, slice(tape, tokens, 1, lay.offsets[s], lay.sizes[s]), 1));
    Tensor cat = summaries.size() == 1 ? summaries[0] : concat(tape, summaries, 1);
    cat = reshape(tape, cat, {B, static_cast<int>(lay.factors.size()) * cfg.d_h});
    return affine(tape, cat, p.at(prefix + ".scales.w"), p.at(prefix + ".scales.b"));
  }
};

// ---------------------------------------------------------------------------
// Dispatch

inline void temporal_init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int L,
                          const TemporalConfig& cfg) {
  switch (cfg.kind) {
    case TemporalKind::Mlp: MlpTemporal::init(store, rng, prefix, d_in, L, cfg); break;
    case TemporalKind::Rnn: GruTemporal::init(store, rng, prefix, d_in, L, cfg); break;
    case TemporalKind::Tcn: TcnTemporal::init(store, rng, prefix, d_in, L, cfg); break;
    case TemporalKind::Transformer: TransformerTemporal::init(store, rng, prefix, d_in, L, cfg); break;
    case TemporalKind::Pyraformer: PyraTemporal::init(store, rng, prefix, d_in, L, cfg); break;
  }
}

inline Tensor temporal_forward(Tape& tape, const BoundParams& p, const std::string& prefix,
                               const Tensor& x, const TemporalConfig& cfg, bool training, Rng* rng) {
  switch (cfg.kind) {
    case TemporalKind::Mlp: return MlpTemporal::forward(tape, p, prefix, x, cfg, training, rng);
    case TemporalKind::Rnn: return GruTemporal::forward(tape, p, prefix, x, cfg, training, rng);
    case TemporalKind::Tcn: return TcnTemporal::forward(tape, p, prefix, x, cfg, training, rng);
    case TemporalKind::Transformer:
      return TransformerTemporal::forward(tape, p, prefix, x, cfg, training, rng);
    case TemporalKind::Pyraformer: return PyraTemporal::forward(tape, p, prefix, x, cfg, training, rng);
  }
  throw std::invalid_argument("temporal_forward: unknown kind");
}

}  // namespace tsbench
