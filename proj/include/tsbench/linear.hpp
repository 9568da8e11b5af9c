#pragma once

// Closed-form linear forecasters: ridge regression on flattened windows in
// global / local / hybrid variants, and the moving-average decomposition
// model (separate linear heads for trend and seasonal parts).

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbench/data.hpp"
#include "tsbench/tensor.hpp"

namespace tsbench {

// Dense column-major-free little matrix type is overkill here; plain
// row-major buffers with explicit extents keep the solver auditable.
struct RidgeFit {
  Tensor weights;     // p x H
  bool used_pinv = false;  // singular system solved through the pseudo-inverse path
};

namespace linalg {

// In-place Cholesky of a symmetric positive definite matrix (row-major n x n).
// Returns false when a pivot collapses.
inline bool cholesky(std::vector<double>& a, int n) {
  for (int j = 0; j < n; ++j) {
    double d = a[static_cast<std::size_t>(j) * n + j];
    for (int k = 0; k < j; ++k) {
      const double l = a[static_cast<std::size_t>(j) * n + k];
      d -= l * l;
    }
    if (d <= 0.0 || !std::isfinite(d)) return false;
    const double lj = std::sqrt(d);
    a[static_cast<std::size_t>(j) * n + j] = lj;
    for (int i = j + 1; i < n; ++i) {
      double s = a[static_cast<std::size_t>(i) * n + j];
      for (int k = 0; k < j; ++k)
        s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
      a[static_cast<std::size_t>(i) * n + j] = s / lj;
    }
  }
  return true;
}

inline void cholesky_solve(const std::vector<double>& L, int n, std::vector<double>& b) {
  for (int i = 0; i < n; ++i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) s -= L[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k)
      s -= L[static_cast<std::size_t>(k) * n + i] * b[static_cast<std::size_t>(k)];
    b[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * n + i];
  }
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is overwritten
// with the rotated matrix; V receives the eigenvectors (columns).
inline void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                         std::vector<double>& V) {
  V.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) V[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-24) break;
    for (int pp = 0; pp < n - 1; ++pp)
      for (int q = pp + 1; q < n; ++q) {
        if (std::abs(A(pp, q)) < 1e-300) continue;
        const double theta = (A(q, q) - A(pp, pp)) / (2.0 * A(pp, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = A(k, pp), akq = A(k, q);
          A(k, pp) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = A(pp, k), aqk = A(q, k);
          A(pp, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = V[static_cast<std::size_t>(k) * n + pp];
          const double vkq = V[static_cast<std::size_t>(k) * n + q];
          V[static_cast<std::size_t>(k) * n + pp] = c * vkp - s * vkq;
          V[static_cast<std::size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
  }
  eigvals.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eigvals[static_cast<std::size_t>(i)] = A(i, i);
}

}  // namespace linalg

// W* = (X^T X + lambda D)^-1 X^T Y with D the identity zeroed at
// `intercept_col` (intercept unregularized; pass -1 for none). Falls back to
// the eigendecomposition pseudo-inverse for singular unregularized systems
// and flags it in the result.
inline RidgeFit fit_ridge(const Tensor& X, const Tensor& Y, double lambda, int intercept_col = -1) {
  if (X.rank() != 2 || Y.rank() != 2)
    throw std::invalid_argument("fit_ridge: X and Y must be matrices, got " + shape_str(X.shape) +
                                " and " + shape_str(Y.shape));
  const int M = X.dim(0), p = X.dim(1), H = Y.dim(1);
  if (Y.dim(0) != M)
    throw std::invalid_argument("fit_ridge: row counts differ, " + shape_str(X.shape) + " vs " +
                                shape_str(Y.shape));
  if (M < 1) throw std::invalid_argument("fit_ridge: empty design matrix");
  if (lambda < 0) throw std::invalid_argument("fit_ridge: negative lambda");

  std::vector<double> xtx(static_cast<std::size_t>(p) * p, 0.0);
  for (int m = 0; m < M; ++m) {
    const double* row = X.ptr() + static_cast<std::size_t>(m) * p;
    for (int i = 0; i < p; ++i) {
      const double xi = row[i];
      if (xi == 0.0) continue;
      for (int j = i; j < p; ++j) xtx[static_cast<std::size_t>(i) * p + j] += xi * row[j];
    }
  }
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < i; ++j)
      xtx[static_cast<std::size_t>(i) * p + j] = xtx[static_cast<std::size_t>(j) * p + i];
  for (int i = 0; i < p; ++i)
    if (i != intercept_col) xtx[static_cast<std::size_t>(i) * p + i] += lambda;

  std::vector<double> xty(static_cast<std::size_t>(p) * H, 0.0);
  for (int m = 0; m < M; ++m) {
    const double* xr = X.ptr() + static_cast<std::size_t>(m) * p;
    const double* yr = Y.ptr() + static_cast<std::size_t>(m) * H;
    for (int i = 0; i < p; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      for (int h = 0; h < H; ++h) xty[static_cast<std::size_t>(i) * H + h] += xi * yr[h];
    }
  }

  RidgeFit fit;
  fit.weights = Tensor({p, H});
  std::vector<double> chol = xtx;
  if (linalg::cholesky(chol, p)) {
    std::vector<double> col(static_cast<std::size_t>(p));
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < p; ++i) col[static_cast<std::size_t>(i)] = xty[static_cast<std::size_t>(i) * H + h];
      linalg::cholesky_solve(chol, p, col);
      for (int i = 0; i < p; ++i) fit.weights.at(i, h) = col[static_cast<std::size_t>(i)];
    }
    return fit;
  }

  // Minimum-norm least squares through (X^T X)^+ X^T Y.
  fit.used_pinv = true;
  std::vector<double> a = xtx, eig, V;
  linalg::jacobi_eigen(a, p, eig, V);
  double max_eig = 0.0;
  for (double e : eig) max_eig = std::max(max_eig, std::abs(e));
  const double tol = max_eig * p * 1e-12;
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < p; ++i) {
      double acc = 0.0;
      for (int k = 0; k < p; ++k) {
        if (std::abs(eig[static_cast<std::size_t>(k)]) <= tol) continue;
        double vt_b = 0.0;
        for (int j = 0; j < p; ++j)
          vt_b += V[static_cast<std::size_t>(j) * p + k] * xty[static_cast<std::size_t>(j) * H + h];
        acc += V[static_cast<std::size_t>(i) * p + k] * vt_b / eig[static_cast<std::size_t>(k)];
      }
      fit.weights.at(i, h) = acc;
    }
  }
  return fit;
}

inline Tensor ridge_predict(const Tensor& X, const Tensor& W) {
  const int M = X.dim(0), p = X.dim(1), H = W.dim(1);
  if (W.dim(0) != p)
    throw std::invalid_argument("ridge_predict: weight rows " + shape_str(W.shape) +
                                " do not match design " + shape_str(X.shape));
  Tensor out({M, H});
  for (int m = 0; m < M; ++m)
    for (int i = 0; i < p; ++i) {
      const double x = X.at(m, i);
      if (x == 0.0) continue;
      for (int h = 0; h < H; ++h) out.at(m, h) += x * W.at(i, h);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Moving-average decomposition: centered mean with replicate padding of
// (k-1)/2 at both ends; seasonal = window - trend.

inline std::pair<std::vector<double>, std::vector<double>> moving_average_decompose(
    const std::vector<double>& window, int k) {
  if (k % 2 == 0) throw std::invalid_argument("moving_average_decompose: k must be odd, got " +
                                              std::to_string(k));
  const int W = static_cast<int>(window.size());
  if (k > 2 * W - 1)
    throw std::invalid_argument("moving_average_decompose: k " + std::to_string(k) +
                                " too large for window length " + std::to_string(W));
  const int half = (k - 1) / 2;
  std::vector<double> trend(static_cast<std::size_t>(W)), seasonal(static_cast<std::size_t>(W));
  for (int t = 0; t < W; ++t) {
    double s = 0.0;
    for (int j = t - half; j <= t + half; ++j) {
      const int idx = std::min(std::max(j, 0), W - 1);  // replicate padding
      s += window[static_cast<std::size_t>(idx)];
    }
    trend[static_cast<std::size_t>(t)] = s / k;
    seasonal[static_cast<std::size_t>(t)] = window[static_cast<std::size_t>(t)] - trend[static_cast<std::size_t>(t)];
  }
  return {trend, seasonal};
}

// ---------------------------------------------------------------------------
// Window-level linear models over a collection (d_x = 1 series).

enum class LinearMode { Global, Local, Hybrid };

inline const char* to_string(LinearMode m) {
  switch (m) {
    case LinearMode::Global: return "global";
    case LinearMode::Local: return "local";
    case LinearMode::Hybrid: return "hybrid";
  }
  return "?";
}

struct RidgeLinearModel {
  LinearMode mode = LinearMode::Global;
  int window = 96, horizon = 96, n_series = 1;
  double lambda = 0.0;
  bool intercept = true;
  bool used_pinv = false;
  // Global/hybrid: one matrix; local: one per series.
  std::vector<Tensor> weights;

  int input_dim() const {
    int p = window + (intercept ? 1 : 0);
    if (mode == LinearMode::Hybrid) p += n_series;  // one-hot series id columns
    return p;
  }

  long long param_count() const {
    long long n = 0;
    for (const auto& w : weights) n += w.numel();
    return n;
  }
};

struct DLinearModel {
  LinearMode mode = LinearMode::Global;
  int window = 96, horizon = 96, n_series = 1;
  int ma_kernel = 25;
  double lambda = 0.0;
  bool intercept = true;
  bool used_pinv = false;
  // Per fitted unit: trend head stacked over seasonal head ((2W [+N] [+1]) x H).
  std::vector<Tensor> weights;

  long long param_count() const {
    long long n = 0;
    for (const auto& w : weights) n += w.numel();
    return n;
  }
};

namespace detail {

struct DesignRows {
  Tensor X, Y;
};

// Flattened past windows (optionally decomposed), one-hot columns for hybrid,
// intercept last.
inline DesignRows build_design(const SeriesCollection& c, const IndexRange& block, int W, int H,
                               LinearMode mode, bool intercept, int only_series, bool decompose,
                               int ma_kernel) {
  const auto starts = window_starts(block, W, H, 1);
  std::vector<int> series;
  if (only_series >= 0)
    series.push_back(only_series);
  else
    for (int i = 0; i < c.n_series; ++i) series.push_back(i);
  const int feat_w = decompose ? 2 * W : W;
  const int p = feat_w + (mode == LinearMode::Hybrid ? c.n_series : 0) + (intercept ? 1 : 0);
  const int M = static_cast<int>(starts.size() * series.size());
  DesignRows d{Tensor({M, p}), Tensor({M, H})};
  int m = 0;
  std::vector<double> win(static_cast<std::size_t>(W));
  for (int sid : series)
    for (int s : starts) {
      for (int t = 0; t < W; ++t) win[static_cast<std::size_t>(t)] = c.value_at(sid, s + t, 0);
      if (decompose) {
        auto [trend, seasonal] = moving_average_decompose(win, ma_kernel);
        for (int t = 0; t < W; ++t) {
          d.X.at(m, t) = trend[static_cast<std::size_t>(t)];
          d.X.at(m, W + t) = seasonal[static_cast<std::size_t>(t)];
        }
      } else {
        for (int t = 0; t < W; ++t) d.X.at(m, t) = win[static_cast<std::size_t>(t)];
      }
      if (mode == LinearMode::Hybrid) d.X.at(m, feat_w + sid) = 1.0;
      if (intercept) d.X.at(m, p - 1) = 1.0;
      for (int h = 0; h < H; ++h) d.Y.at(m, h) = c.value_at(sid, s + W + h, 0);
      ++m;
    }
  return d;
}

}  // namespace detail

// Refuses local fits whose total weight count exceeds the budget; mirrors the
// "beyond our computational budget" guard for very wide collections.
inline constexpr long long kLocalParamBudget = 400'000'000;

inline RidgeLinearModel fit_ridge_linear(const SeriesCollection& c, const IndexRange& train, int W,
                                         int H, LinearMode mode, double lambda, bool intercept = true) {
  RidgeLinearModel model;
  model.mode = mode;
  model.window = W;
  model.horizon = H;
  model.n_series = c.n_series;
  model.lambda = lambda;
  model.intercept = intercept;
  if (mode == LinearMode::Local) {
    const long long total = static_cast<long long>(c.n_series) * (W + (intercept ? 1 : 0)) * H;
    if (total > kLocalParamBudget)
      throw std::invalid_argument("fit_ridge_linear: local mode needs " + std::to_string(total) +
                                  " weights, over the budget of " + std::to_string(kLocalParamBudget));
    for (int i = 0; i < c.n_series; ++i) {
      auto d = detail::build_design(c, train, W, H, mode, intercept, i, false, 0);
      auto fit = fit_ridge(d.X, d.Y, lambda, intercept ? d.X.dim(1) - 1 : -1);
      model.used_pinv = model.used_pinv || fit.used_pinv;
      model.weights.push_back(std::move(fit.weights));
    }
  } else {
    auto d = detail::build_design(c, train, W, H, mode, intercept, -1, false, 0);
    auto fit = fit_ridge(d.X, d.Y, lambda, intercept ? d.X.dim(1) - 1 : -1);
    model.used_pinv = fit.used_pinv;
    model.weights.push_back(std::move(fit.weights));
  }
  return model;
}

inline DLinearModel fit_dlinear(const SeriesCollection& c, const IndexRange& train, int W, int H,
                                LinearMode mode, int ma_kernel, double lambda, bool intercept = true) {
  DLinearModel model;
  model.mode = mode;
  model.window = W;
  model.horizon = H;
  model.n_series = c.n_series;
  model.ma_kernel = ma_kernel;
  model.lambda = lambda;
  model.intercept = intercept;
  if (mode == LinearMode::Local) {
    for (int i = 0; i < c.n_series; ++i) {
      auto d = detail::build_design(c, train, W, H, mode, intercept, i, true, ma_kernel);
      auto fit = fit_ridge(d.X, d.Y, lambda, intercept ? d.X.dim(1) - 1 : -1);
      model.used_pinv = model.used_pinv || fit.used_pinv;
      model.weights.push_back(std::move(fit.weights));
    }
  } else {
    auto d = detail::build_design(c, train, W, H, mode, intercept, -1, true, ma_kernel);
    auto fit = fit_ridge(d.X, d.Y, lambda, intercept ? d.X.dim(1) - 1 : -1);
    model.used_pinv = fit.used_pinv;
    model.weights.push_back(std::move(fit.weights));
  }
  return model;
}

// Forecast H steps from one raw window. trend-head(trend) + seasonal-head
// (seasonal) evaluated as the stacked design row times the stacked weights.
inline std::vector<double> dlinear_forward(const DLinearModel& m, const std::vector<double>& window,
                                           int series_id) {
  if (static_cast<int>(window.size()) != m.window)
    throw std::invalid_argument("dlinear_forward: window length mismatch");
  auto [trend, seasonal] = moving_average_decompose(window, m.ma_kernel);
  const int feat_w = 2 * m.window;
  const int p = feat_w + (m.mode == LinearMode::Hybrid ? m.n_series : 0) + (m.intercept ? 1 : 0);
  Tensor X({1, p});
  for (int t = 0; t < m.window; ++t) {
    X.at(0, t) = trend[static_cast<std::size_t>(t)];
    X.at(0, m.window + t) = seasonal[static_cast<std::size_t>(t)];
  }
  if (m.mode == LinearMode::Hybrid) X.at(0, feat_w + series_id) = 1.0;
  if (m.intercept) X.at(0, p - 1) = 1.0;
  const Tensor& W = m.mode == LinearMode::Local ? m.weights[static_cast<std::size_t>(series_id)]
                                                : m.weights[0];
  Tensor y = ridge_predict(X, W);
  return std::vector<double>(y.data->begin(), y.data->end());
}

inline std::vector<double> ridge_linear_forward(const RidgeLinearModel& m,
                                                const std::vector<double>& window, int series_id) {
  if (static_cast<int>(window.size()) != m.window)
    throw std::invalid_argument("ridge_linear_forward: window length mismatch");
  const int p = m.input_dim();
  Tensor X({1, p});
  for (int t = 0; t < m.window; ++t) X.at(0, t) = window[static_cast<std::size_t>(t)];
  if (m.mode == LinearMode::Hybrid) X.at(0, m.window + series_id) = 1.0;
  if (m.intercept) X.at(0, p - 1) = 1.0;
  const Tensor& W = m.mode == LinearMode::Local ? m.weights[static_cast<std::size_t>(series_id)]
                                                : m.weights[0];
  Tensor y = ridge_predict(X, W);
  return std::vector<double>(y.data->begin(), y.data->end());
}

// MSE / MAE of a linear model over a block, stride-1 windows.
struct LinearEval {
  double mse = 0.0, mae = 0.0;
};

template <class Model, class Fwd>
inline LinearEval evaluate_linear(const Model& m, const SeriesCollection& c, const IndexRange& block,
                                  Fwd&& fwd) {
  const auto starts = window_starts(block, m.window, m.horizon, 1);
  double se = 0.0, ae = 0.0;
  long long n = 0;
  std::vector<double> win(static_cast<std::size_t>(m.window));
  for (int sid = 0; sid < c.n_series; ++sid)
    for (int s : starts) {
      for (int t = 0; t < m.window; ++t) win[static_cast<std::size_t>(t)] = c.value_at(sid, s + t, 0);
      const auto pred = fwd(m, win, sid);
      for (int h = 0; h < m.horizon; ++h) {
        const double err = pred[static_cast<std::size_t>(h)] - c.value_at(sid, s + m.window + h, 0);
        se += err * err;
        ae += std::abs(err);
        ++n;
      }
    }
  return {se / static_cast<double>(n), ae / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Flat binary container for fitted weights: magic, mode, extents, lambda,
// then the matrices in order.

inline void save_ridge_weights(const RidgeLinearModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_ridge_weights: cannot open " + path);
  const char magic[4] = {'T', 'S', 'B', 'W'};
  out.write(magic, 4);
  auto w32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  w32(static_cast<std::int32_t>(m.mode));
  w32(m.window);
  w32(m.horizon);
  w32(m.n_series);
  w32(m.intercept ? 1 : 0);
  w32(static_cast<std::int32_t>(m.weights.size()));
  out.write(reinterpret_cast<const char*>(&m.lambda), 8);
  for (const auto& w : m.weights) {
    w32(w.dim(0));
    w32(w.dim(1));
    out.write(reinterpret_cast<const char*>(w.ptr()), static_cast<std::streamsize>(w.numel() * 8));
  }
}

inline RidgeLinearModel load_ridge_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_ridge_weights: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TSBW", 4) != 0)
    throw std::invalid_argument("load_ridge_weights: bad magic in " + path);
  auto r32 = [&]() {
    std::int32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  RidgeLinearModel m;
  m.mode = static_cast<LinearMode>(r32());
  m.window = r32();
  m.horizon = r32();
  m.n_series = r32();
  m.intercept = r32() != 0;
  const int count = r32();
  in.read(reinterpret_cast<char*>(&m.lambda), 8);
  for (int i = 0; i < count; ++i) {
    const int r = r32(), cdim = r32();
    Tensor w({r, cdim});
    in.read(reinterpret_cast<char*>(w.ptr()), static_cast<std::streamsize>(w.numel() * 8));
    m.weights.push_back(std::move(w));
  }
  if (!in) throw std::invalid_argument("load_ridge_weights: truncated file " + path);
  return m;
}

}  // namespace tsbench
