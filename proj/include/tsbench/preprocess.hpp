#pragma once

// Preprocessing stage: per-window reversible instance normalization, the
// per-step sum encoder or the strided-convolution patch encoder, and the
// per-series embedding attachment for hybrid configurations.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbench/autodiff.hpp"
#include "tsbench/optim.hpp"
#include "tsbench/tensor.hpp"

namespace tsbench {

using BoundParams = std::map<std::string, Tensor>;

// Per-window statistics (masked-aware). Detached from the tape: gradients do
// not flow through the window mean/std, only through the learnable affine.
struct RevINState {
  Tensor mean;   // B x d_x, constant
  Tensor sigma;  // B x d_x, constant; sigma = sqrt(var + 1e-10) >= 1e-5
};

struct RevIN {
  static constexpr double kVarEps = 1e-10;

  // window (B, W, d_x) -> normalized constant tensor + state. The learnable
  // affine (if any) is applied by the caller through `affine_forward`.
  static std::pair<Tensor, RevINState> normalize(const Tensor& window, const Tensor& mask) {
    if (window.rank() != 3)
      throw std::invalid_argument("revin: expected (B,W,d), got " + shape_str(window.shape));
    const int B = window.dim(0), W = window.dim(1), d = window.dim(2);
    RevINState st;
    st.mean = Tensor({B, d});
    st.sigma = Tensor({B, d});
    Tensor out(window.shape);
    const bool masked = mask.numel() == window.numel();
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < d; ++c) {
        double sum = 0.0, count = 0.0;
        for (int t = 0; t < W; ++t)
          if (!masked || mask.at(b, t, c) > 0.5) {
            sum += window.at(b, t, c);
            count += 1.0;
          }
        if (count == 0.0)
          throw std::invalid_argument("revin: window " + std::to_string(b) + " channel " +
                                      std::to_string(c) + " is fully masked");
        const double mu = sum / count;
        double ss = 0.0;
        for (int t = 0; t < W; ++t)
          if (!masked || mask.at(b, t, c) > 0.5) {
            const double dd = window.at(b, t, c) - mu;
            ss += dd * dd;
          }
        const double sg = std::sqrt(ss / count + kVarEps);
        st.mean.at(b, c) = mu;
        st.sigma.at(b, c) = sg;
        for (int t = 0; t < W; ++t)
          out.at(b, t, c) = (!masked || mask.at(b, t, c) > 0.5) ? (window.at(b, t, c) - mu) / sg : 0.0;
      }
    return {out, st};
  }

  // y = gamma * xhat + beta, gamma/beta of width d_x.
  static Tensor affine_forward(Tape& tape, const Tensor& xhat, const Tensor& gamma, const Tensor& beta) {
    return add(tape, mul(tape, xhat, gamma), beta);
  }

  // Inverse affine first, then restore window scale/shift: sigma and mean are
  // expanded to the prediction horizon as constants.
  static Tensor denormalize(Tape& tape, const Tensor& pred, const RevINState& st, const Tensor* gamma,
                            const Tensor* beta) {
    const int B = pred.dim(0), H = pred.dim(1), d = pred.dim(2);
    Tensor y = pred;
    if (gamma && beta) {
      y = sub(tape, y, *beta);
      y = mul(tape, y, recip(tape, *gamma));
    }
    Tensor sig_exp({B, H, d}), mu_exp({B, H, d});
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < H; ++t)
        for (int c = 0; c < d; ++c) {
          sig_exp.at(b, t, c) = st.sigma.at(b, c);
          mu_exp.at(b, t, c) = st.mean.at(b, c);
        }
    return add(tape, mul(tape, y, sig_exp), mu_exp);
  }
};

// Per-step sum encoder: nonlinear projection of values plus nonlinear
// projection of covariates.
struct FeatureEncoder {
  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_x, int d_u, int d_h) {
    store.add_shared(prefix + ".val.w", init_fan_in(rng, {d_x, d_h}, d_x));
    store.add_shared(prefix + ".val.b", Tensor({d_h}, 0.0));
    if (d_u > 0) {
      store.add_shared(prefix + ".cov.w", init_fan_in(rng, {d_u, d_h}, d_u));
      store.add_shared(prefix + ".cov.b", Tensor({d_h}, 0.0));
    }
  }

  // x (B,W,d_x), u (B,W,d_u) or empty -> (B,W,d_h)
  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const Tensor& u) {
    Tensor enc = gelu(tape, affine(tape, x, p.at(prefix + ".val.w"), p.at(prefix + ".val.b")));
    if (u.numel() > 0 && p.count(prefix + ".cov.w"))
      enc = add(tape, enc, gelu(tape, affine(tape, u, p.at(prefix + ".cov.w"), p.at(prefix + ".cov.b"))));
    return enc;
  }
};

// Strided-convolution patch encoder over values concatenated channelwise with
// covariates; n_p = floor((W - P)/S) + 1.
struct PatchEncoder {
  static int patch_count(int W, int P, int S) {
    if (P > W)
      throw std::invalid_argument("patch_encode: patch length " + std::to_string(P) +
                                  " exceeds window " + std::to_string(W));
    return (W - P) / S + 1;
  }

  static void init(ParameterStore& store, Rng& rng, const std::string& prefix, int d_in, int P, int d_h) {
    store.add_shared(prefix + ".kernel", init_fan_in(rng, {P, d_in, d_h}, static_cast<long long>(P) * d_in));
    store.add_shared(prefix + ".bias", Tensor({d_h}, 0.0));
  }

  static Tensor forward(Tape& tape, const BoundParams& p, const std::string& prefix, const Tensor& x,
                        const Tensor& u, int P, int S) {
    Tensor in = x;
    if (u.numel() > 0) in = concat(tape, {x, u}, 2);
    Tensor conv = conv1d(tape, in, p.at(prefix + ".kernel"), S, 1, /*causal=*/false);
    return gelu(tape, add(tape, conv, p.at(prefix + ".bias")));
  }
};

// N x d_emb table, one row per series; rows are per-series parameters.
struct LocalEmbedding {
  static void init(ParameterStore& store, Rng& rng, const std::string& name, int n_series, int d_emb) {
    store.add_per_series(name, init_fan_in(rng, {n_series, d_emb}, d_emb));
  }

  // encoding (B,L,d) + ids -> (B,L,d+d_emb); row i is gathered only for id i.
  static Tensor attach(Tape& tape, const Tensor& table, const Tensor& encoding,
                       const std::vector<int>& ids) {
    const int B = encoding.dim(0), L = encoding.dim(1);
    if (static_cast<int>(ids.size()) != B)
      throw std::invalid_argument("attach_local_embedding: ids length " + std::to_string(ids.size()) +
                                  " does not match batch " + std::to_string(B));
    if (table.dim(1) == 0) return encoding;
    Tensor emb = embedding(tape, table, ids);                       // B x d_emb
    Tensor emb3 = reshape(tape, emb, {B, 1, table.dim(1)});
    Tensor tiled = repeat_axis(tape, emb3, 1, L);                   // B x L x d_emb
    return concat(tape, {encoding, tiled}, 2);
  }
};

}  // namespace tsbench
