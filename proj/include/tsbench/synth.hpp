#pragma once

// Synthetic collections with analytically known optimal forecast errors. Each
// generator returns the data plus two oracle MSE levels: what an informed
// model can reach and what a model blind to the isolating factor can reach.
// Monte-Carlo estimators for the same quantities live alongside so the closed
// forms can be cross-checked.

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsbench/data.hpp"
#include "tsbench/tensor.hpp"

namespace tsbench {

struct SynthResult {
  SeriesCollection collection;
  double oracle_informed = 0.0;  // MSE floor for a model that sees the isolating factor
  double oracle_blind = 0.0;     // MSE floor for a model blind to it
  std::vector<int> target_series;  // series the oracles (and evaluation) refer to
  std::string generator;
  std::string params_json;  // generator parameters, serialized by the caller-facing API
};

namespace detail {
inline std::vector<long long> hourly_timestamps(int T, long long start = 978307200 /*2001-01-01*/) {
  std::vector<long long> ts(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) ts[static_cast<std::size_t>(t)] = start + 3600LL * t;
  return ts;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// D1 isolator: per-series AR(1), x^i_{t+1} = rho_i x^i_t + sigma eps.
// rho_i is drawn uniformly in [rho_lo, rho_hi], or from the two endpoints
// with equal probability when endpoints_only is set.
//
// Informed oracle (per-series-aware, W=1): sigma^2.
// Blind oracle: the best shared linear one-lag predictor a* x_t, with
//   a* = sum_i rho_i v_i / sum_i v_i,  v_i = sigma^2/(1-rho_i^2),
//   MSE = sigma^2 + mean_i (rho_i - a*)^2 v_i.
// For mean-zero rho this reduces to sigma^2 + Var(rho) * mean_i v_i.

struct LocalArSpec {
  int n_series = 8;
  int n_steps = 1024;
  double sigma = 1.0;
  double rho_lo = -0.8;
  double rho_hi = 0.8;
  bool endpoints_only = false;
  std::uint64_t seed = 1;
};

inline double local_ar_blind_mse(const std::vector<double>& rho, double sigma) {
  double num = 0.0, den = 0.0;
  std::vector<double> var(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    var[i] = sigma * sigma / (1.0 - rho[i] * rho[i]);
    num += rho[i] * var[i];
    den += var[i];
  }
  const double a = den > 0 ? num / den : 0.0;
  double mse = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) mse += (rho[i] - a) * (rho[i] - a) * var[i];
  return sigma * sigma + mse / static_cast<double>(rho.size());
}

inline SynthResult synth_local_ar(const LocalArSpec& s, std::vector<double>* rho_out = nullptr) {
  if (std::abs(s.rho_lo) >= 1.0 || std::abs(s.rho_hi) >= 1.0 || s.rho_lo > s.rho_hi)
    throw std::invalid_argument("synth_local_ar: rho range must lie inside (-1, 1)");
  Rng rng(s.seed);
  std::vector<double> rho(static_cast<std::size_t>(s.n_series));
  for (auto& r : rho)
    r = s.endpoints_only ? (rng.uniform(0.0, 1.0) < 0.5 ? s.rho_lo : s.rho_hi)
                         : rng.uniform(s.rho_lo, s.rho_hi);
  SynthResult out;
  auto& c = out.collection;
  c.n_series = s.n_series;
  c.n_steps = s.n_steps;
  c.d_x = 1;
  c.timestamps = detail::hourly_timestamps(s.n_steps);
  c.frequency = 3600;
  c.values.assign(static_cast<std::size_t>(s.n_series), std::vector<double>(static_cast<std::size_t>(s.n_steps)));
  for (int i = 0; i < s.n_series; ++i) {
    c.names.push_back("ar" + std::to_string(i));
    const double r = rho[static_cast<std::size_t>(i)];
    const double stat_sd = s.sigma / std::sqrt(1.0 - r * r);
    double x = rng.normal(0.0, stat_sd);
    for (int t = 0; t < s.n_steps; ++t) {
      c.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] = x;
      x = r * x + rng.normal(0.0, s.sigma);
    }
  }
  out.oracle_informed = s.sigma * s.sigma;
  out.oracle_blind = local_ar_blind_mse(rho, s.sigma);
  out.target_series.resize(static_cast<std::size_t>(s.n_series));
  std::iota(out.target_series.begin(), out.target_series.end(), 0);
  out.generator = "local_ar";
  if (rho_out) *rho_out = rho;
  return out;
}

// Simulated MSE of the oracle predictors over >= `samples` transitions.
inline std::pair<double, double> local_ar_oracle_mc(const LocalArSpec& s, long long samples,
                                                    std::uint64_t seed) {
  std::vector<double> rho;
  {
    Rng rng(s.seed);
    rho.resize(static_cast<std::size_t>(s.n_series));
    for (auto& r : rho)
      r = s.endpoints_only ? (rng.uniform(0.0, 1.0) < 0.5 ? s.rho_lo : s.rho_hi)
                           : rng.uniform(s.rho_lo, s.rho_hi);
  }
  double num = 0.0, den = 0.0;
  for (double r : rho) {
    const double v = s.sigma * s.sigma / (1.0 - r * r);
    num += r * v;
    den += v;
  }
  const double a = den > 0 ? num / den : 0.0;
  Rng rng(seed);
  double se_inf = 0.0, se_blind = 0.0;
  const long long per_series = samples / s.n_series + 1;
  long long n = 0;
  for (int i = 0; i < s.n_series; ++i) {
    const double r = rho[static_cast<std::size_t>(i)];
    double x = rng.normal(0.0, s.sigma / std::sqrt(1.0 - r * r));
    for (long long t = 0; t < per_series; ++t) {
      const double next = r * x + rng.normal(0.0, s.sigma);
      const double e_inf = next - r * x;
      const double e_blind = next - a * x;
      se_inf += e_inf * e_inf;
      se_blind += e_blind * e_blind;
      x = next;
      ++n;
    }
  }
  return {se_inf / static_cast<double>(n), se_blind / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// D2 isolator: per-step phase process. phase_t is iid uniform over P phases;
// x_t = means[phase_t] + sigma eps. The exogenous channels are the one-hot
// phase indicator, available for past and future steps (calendar-style).
// A deterministic periodic schedule would be identifiable from the window
// itself, so the phases must be freshly drawn for the blind oracle
// (sigma^2 + Var over phase means) to hold.

struct CalendarSeasonalSpec {
  int n_series = 1;
  int n_steps = 4096;
  std::vector<double> phase_means = {-1.0, 1.0};
  double sigma = 0.1;
  std::uint64_t seed = 1;
};

inline SynthResult synth_calendar_seasonal(const CalendarSeasonalSpec& s) {
  const int P = static_cast<int>(s.phase_means.size());
  if (P < 1) throw std::invalid_argument("synth_calendar_seasonal: need at least one phase mean");
  Rng rng(s.seed);
  SynthResult out;
  auto& c = out.collection;
  c.n_series = s.n_series;
  c.n_steps = s.n_steps;
  c.d_x = 1;
  c.d_u = P;
  c.timestamps = detail::hourly_timestamps(s.n_steps);
  c.frequency = 3600;
  c.exogenous.assign(static_cast<std::size_t>(s.n_steps) * P, 0.0);
  c.values.assign(static_cast<std::size_t>(s.n_series), std::vector<double>(static_cast<std::size_t>(s.n_steps)));
  for (int i = 0; i < s.n_series; ++i) c.names.push_back("seasonal" + std::to_string(i));
  for (int t = 0; t < s.n_steps; ++t) {
    const int phase = static_cast<int>(rng.uniform_int(0, P - 1));
    c.exogenous[static_cast<std::size_t>(t) * P + phase] = 1.0;
    for (int i = 0; i < s.n_series; ++i)
      c.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] =
          s.phase_means[static_cast<std::size_t>(phase)] + rng.normal(0.0, s.sigma);
  }
  double mean = 0.0;
  for (double m : s.phase_means) mean += m;
  mean /= P;
  double var = 0.0;
  for (double m : s.phase_means) var += (m - mean) * (m - mean);
  var /= P;
  out.oracle_informed = s.sigma * s.sigma;
  out.oracle_blind = s.sigma * s.sigma + var;
  out.target_series.resize(static_cast<std::size_t>(s.n_series));
  std::iota(out.target_series.begin(), out.target_series.end(), 0);
  out.generator = "calendar_seasonal";
  return out;
}

inline std::pair<double, double> calendar_seasonal_oracle_mc(const CalendarSeasonalSpec& s,
                                                             long long samples, std::uint64_t seed) {
  const int P = static_cast<int>(s.phase_means.size());
  double mean = 0.0;
  for (double m : s.phase_means) mean += m;
  mean /= P;
  Rng rng(seed);
  double se_inf = 0.0, se_blind = 0.0;
  for (long long n = 0; n < samples; ++n) {
    const int phase = static_cast<int>(rng.uniform_int(0, P - 1));
    const double x = s.phase_means[static_cast<std::size_t>(phase)] + rng.normal(0.0, s.sigma);
    const double e_inf = x - s.phase_means[static_cast<std::size_t>(phase)];
    const double e_blind = x - mean;
    se_inf += e_inf * e_inf;
    se_blind += e_blind * e_blind;
  }
  return {se_inf / static_cast<double>(samples), se_blind / static_cast<double>(samples)};
}

// ---------------------------------------------------------------------------
// D4 isolator: driver mixing. A pool of observable driver series carries iid
// standard-normal values; each target series i is the mean of its k fixed
// drivers, one step delayed, plus noise:
//   x^i_t = (1/k) sum_{j in nbr(i)} z^j_{t-1} + sigma eps^i_t.
// Cross-series-informed MSE = sigma^2; univariate-informed = sigma^2 + 1/k.
// The oracles refer to the target series (listed in target_series); the
// drivers themselves are iid noise and carry an irreducible error of 1.
//
// The independent variant severs observability: the k drivers are private
// and not included in the collection, so every model's optimum on the (then
// only) N series is sigma^2 + 1/k.

struct SpatialMixingSpec {
  int n_targets = 32;
  int n_steps = 2048;
  int k_neighbors = 4;
  int driver_pool = 0;  // 0 -> 2*k
  double sigma = 0.1;
  bool mixing = true;  // false -> independent-series variant
  std::uint64_t seed = 1;
};

inline SynthResult synth_spatial_mixing(const SpatialMixingSpec& s) {
  if (s.k_neighbors < 1) throw std::invalid_argument("synth_spatial_mixing: k must be >= 1");
  const int pool = s.mixing ? (s.driver_pool > 0 ? s.driver_pool : 2 * s.k_neighbors) : s.k_neighbors;
  if (s.mixing && pool < s.k_neighbors)
    throw std::invalid_argument("synth_spatial_mixing: driver pool smaller than k");
  Rng rng(s.seed);
  SynthResult out;
  auto& c = out.collection;
  const int n_total = s.mixing ? s.n_targets + pool : s.n_targets;
  c.n_series = n_total;
  c.n_steps = s.n_steps;
  c.d_x = 1;
  c.timestamps = detail::hourly_timestamps(s.n_steps);
  c.frequency = 3600;
  c.values.assign(static_cast<std::size_t>(n_total), std::vector<double>(static_cast<std::size_t>(s.n_steps)));

  // Drivers: iid standard normal per step. In the independent variant each
  // target has its own private pool (not part of the collection).
  const int n_driver_streams = s.mixing ? pool : s.n_targets * s.k_neighbors;
  std::vector<std::vector<double>> z(static_cast<std::size_t>(n_driver_streams),
                                     std::vector<double>(static_cast<std::size_t>(s.n_steps)));
  for (auto& zs : z)
    for (auto& v : zs) v = rng.normal(0.0, 1.0);

  // Fixed neighbor assignment.
  std::vector<std::vector<int>> nbr(static_cast<std::size_t>(s.n_targets));
  for (int i = 0; i < s.n_targets; ++i) {
    if (s.mixing) {
      std::vector<int> cand(static_cast<std::size_t>(pool));
      std::iota(cand.begin(), cand.end(), 0);
      for (int j = 0; j < s.k_neighbors; ++j) {
        const int pick = static_cast<int>(rng.uniform_int(j, pool - 1));
        std::swap(cand[static_cast<std::size_t>(j)], cand[static_cast<std::size_t>(pick)]);
      }
      nbr[static_cast<std::size_t>(i)].assign(cand.begin(), cand.begin() + s.k_neighbors);
    } else {
      for (int j = 0; j < s.k_neighbors; ++j)
        nbr[static_cast<std::size_t>(i)].push_back(i * s.k_neighbors + j);
    }
  }

  for (int i = 0; i < s.n_targets; ++i) {
    c.names.push_back("target" + std::to_string(i));
    for (int t = 0; t < s.n_steps; ++t) {
      double drv = 0.0;
      if (t > 0)
        for (int j : nbr[static_cast<std::size_t>(i)])
          drv += z[static_cast<std::size_t>(j)][static_cast<std::size_t>(t) - 1];
      drv /= s.k_neighbors;
      c.values[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] =
          (t > 0 ? drv : rng.normal(0.0, std::sqrt(1.0 / s.k_neighbors))) + rng.normal(0.0, s.sigma);
    }
  }
  if (s.mixing)
    for (int j = 0; j < pool; ++j) {
      c.names.push_back("driver" + std::to_string(j));
      c.values[static_cast<std::size_t>(s.n_targets + j)] = z[static_cast<std::size_t>(j)];
    }

  const double base = s.sigma * s.sigma;
  out.oracle_informed = s.mixing ? base : base + 1.0 / s.k_neighbors;
  out.oracle_blind = base + 1.0 / s.k_neighbors;
  out.target_series.resize(static_cast<std::size_t>(s.n_targets));
  std::iota(out.target_series.begin(), out.target_series.end(), 0);
  out.generator = "spatial_mixing";
  return out;
}

inline std::pair<double, double> spatial_mixing_oracle_mc(const SpatialMixingSpec& s, long long samples,
                                                          std::uint64_t seed) {
  Rng rng(seed);
  double se_inf = 0.0, se_blind = 0.0;
  for (long long n = 0; n < samples; ++n) {
    double drv = 0.0;
    for (int j = 0; j < s.k_neighbors; ++j) drv += rng.normal(0.0, 1.0);
    drv /= s.k_neighbors;
    const double x = drv + rng.normal(0.0, s.sigma);
    const double e_inf = s.mixing ? x - drv : x;  // blind to private drivers otherwise
    const double e_blind = x;                     // best blind prediction is 0
    se_inf += e_inf * e_inf;
    se_blind += e_blind * e_blind;
  }
  return {se_inf / static_cast<double>(samples), se_blind / static_cast<double>(samples)};
}

// ---------------------------------------------------------------------------
// Sidecar metadata: generator parameters, oracle errors, target series, and
// the exogenous channels (which the plain CSV layout cannot carry).

inline std::string sidecar_path_for(const std::string& csv_path) { return csv_path + ".meta.json"; }

inline void write_sidecar(const SynthResult& r, const nlohmann::json& params,
                          const std::string& csv_path) {
  nlohmann::json j;
  j["generator"] = r.generator;
  j["params"] = params;
  j["oracle_informed"] = r.oracle_informed;
  j["oracle_blind"] = r.oracle_blind;
  j["target_series"] = r.target_series;
  if (r.collection.d_u > 0) {
    j["d_u"] = r.collection.d_u;
    j["exogenous"] = r.collection.exogenous;
  }
  std::ofstream out(sidecar_path_for(csv_path));
  if (!out) throw std::invalid_argument("write_sidecar: cannot open " + sidecar_path_for(csv_path));
  out << j.dump(2) << "\n";
}

struct LoadedDataset {
  SeriesCollection collection;
  bool has_sidecar = false;
  double oracle_informed = 0.0, oracle_blind = 0.0;
  std::vector<int> target_series;
  std::string generator;
};

// CSV reload; when a sidecar sits next to the file, the exogenous channels
// and oracle metadata are reattached.
inline LoadedDataset load_dataset(const std::string& csv_path) {
  LoadedDataset out;
  out.collection = load_csv(csv_path);
  std::ifstream meta(sidecar_path_for(csv_path));
  if (meta) {
    nlohmann::json j;
    meta >> j;
    out.has_sidecar = true;
    out.generator = j.value("generator", "");
    out.oracle_informed = j.value("oracle_informed", 0.0);
    out.oracle_blind = j.value("oracle_blind", 0.0);
    out.target_series = j.value("target_series", std::vector<int>{});
    if (j.contains("d_u")) {
      out.collection.d_u = j["d_u"].get<int>();
      out.collection.exogenous = j["exogenous"].get<std::vector<double>>();
      out.collection.check();
    }
  }
  return out;
}

}  // namespace tsbench
