#pragma once

// Training / evaluation protocol: chronological splits, masked-aware scaled
// metrics, early stopping on validation MSE, multi-seed aggregation, paired
// ablations that differ in exactly one configuration field, hidden-size
// sweeps and wall-clock profiling. Run records append to a JSONL log.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "tsbench/data.hpp"
#include "tsbench/model.hpp"

namespace tsbench {

struct TrainSpec {
  int max_epochs = 30;
  int batch_size = 64;
  double lr = 1e-3;
  int patience = 5;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int max_batches_per_epoch = 0;  // 0 = full epoch
  bool verbose = false;
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_mse = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_mse = 0.0;
  double mean_batch_ms = 0.0;  // warm-up batches excluded
};

struct EvalResult {
  double mse = 0.0, mae = 0.0;
  std::vector<double> per_step_mse, per_step_mae;
  std::vector<double> per_series_mse;
  long long count = 0;

  double mse_over(const std::vector<int>& series) const {
    double s = 0.0;
    for (int i : series) s += per_series_mse[static_cast<std::size_t>(i)];
    return s / static_cast<double>(series.size());
  }
};

// Data prepared for one configuration: covariates attached, scaler applied,
// joint view taken for the multivariate mode, splits computed.
struct ExperimentData {
  SeriesCollection prepared;
  Splits splits;
  std::optional<Scaler> scaler;
  BatchMode mode = BatchMode::PerSeries;
  int window = 96, horizon = 96;

  WindowSampler sampler(const IndexRange& block, int stride = 1) const {
    return WindowSampler(prepared, block, window, horizon, stride, mode);
  }
};

inline ExperimentData prepare_data(const SeriesCollection& raw, const ModelConfig& cfg,
                                   const SplitSpec& split_spec = {}) {
  SeriesCollection c = raw;
  if (cfg.covariates == CovariateSet::Calendar && c.d_u == 0) {
    if (c.timestamps.empty())
      throw std::invalid_argument("prepare_data: calendar covariates need timestamps");
    c.exogenous = encode_calendar(c.timestamps);
    c.d_u = kCalendarChannels;
  }
  if (cfg.d1_mode == D1Mode::MultivariateJoint) c = as_joint(c);
  ExperimentData data;
  data.splits = split(c, split_spec);
  if (cfg.scaler) {
    data.scaler = Scaler::fit(c, data.splits.train);
    data.prepared = data.scaler->apply(c);
  } else {
    data.prepared = c;
  }
  data.mode = cfg.spatial.kind != SpatialKind::None ? BatchMode::Grouped : BatchMode::PerSeries;
  data.window = cfg.window;
  data.horizon = cfg.horizon;
  return data;
}

inline DataDims dims_of(const ExperimentData& d) {
  return {d.prepared.n_series, d.prepared.d_x, d.prepared.d_u};
}

// ---------------------------------------------------------------------------
// Loss and metrics

// Masked mean squared error as a differentiated scalar.
inline Tensor mse_loss(Tape& tape, const Tensor& pred, const WindowBatch& batch) {
  Tensor diff = sub(tape, pred, batch.target);
  Tensor sq = mul(tape, diff, diff);
  double mask_count = 0.0;
  for (double m : *batch.target_mask.data) mask_count += m;
  if (mask_count == 0.0) throw std::invalid_argument("mse_loss: all targets masked");
  Tensor masked = mul(tape, sq, batch.target_mask);
  return scale(tape, sum_all(tape, masked), 1.0 / mask_count);
}

inline EvalResult evaluate(const ForecastModel& model, const ExperimentData& data,
                           const IndexRange& block, int batch_items = 256) {
  WindowSampler sampler = data.sampler(block, 1);
  const int H = data.horizon, d_x = data.prepared.d_x, N = data.prepared.n_series;
  EvalResult res;
  res.per_step_mse.assign(static_cast<std::size_t>(H), 0.0);
  res.per_step_mae.assign(static_cast<std::size_t>(H), 0.0);
  std::vector<double> step_count(static_cast<std::size_t>(H), 0.0);
  std::vector<double> series_se(static_cast<std::size_t>(N), 0.0), series_count(static_cast<std::size_t>(N), 0.0);
  double se = 0.0, ae = 0.0, count = 0.0;
  const auto items = sampler.all_items();
  const int chunk = std::max<int>(1, batch_items / (sampler.mode() == BatchMode::Grouped
                                                        ? std::max(1, N)
                                                        : 1));
  for (std::size_t pos = 0; pos < items.size(); pos += static_cast<std::size_t>(chunk)) {
    std::vector<long long> part(items.begin() + static_cast<long long>(pos),
                                items.begin() + static_cast<long long>(std::min(items.size(), pos + chunk)));
    WindowBatch b = sampler.make_batch(part);
    Tensor pred = model.predict(b);
    const int B = b.past.dim(0);
    for (int r = 0; r < B; ++r)
      for (int h = 0; h < H; ++h)
        for (int c = 0; c < d_x; ++c) {
          if (b.target_mask.at(r, h, c) < 0.5) continue;
          const double err = pred.at(r, h, c) - b.target.at(r, h, c);
          se += err * err;
          ae += std::abs(err);
          count += 1.0;
          res.per_step_mse[static_cast<std::size_t>(h)] += err * err;
          res.per_step_mae[static_cast<std::size_t>(h)] += std::abs(err);
          step_count[static_cast<std::size_t>(h)] += 1.0;
          const int sid = b.series_ids[static_cast<std::size_t>(r)];
          series_se[static_cast<std::size_t>(sid)] += err * err;
          series_count[static_cast<std::size_t>(sid)] += 1.0;
        }
  }
  if (count == 0.0) throw std::invalid_argument("evaluate: no unmasked targets in block");
  res.mse = se / count;
  res.mae = ae / count;
  for (int h = 0; h < H; ++h) {
    res.per_step_mse[static_cast<std::size_t>(h)] /= std::max(1.0, step_count[static_cast<std::size_t>(h)]);
    res.per_step_mae[static_cast<std::size_t>(h)] /= std::max(1.0, step_count[static_cast<std::size_t>(h)]);
  }
  res.per_series_mse.assign(static_cast<std::size_t>(N), 0.0);
  for (int i = 0; i < N; ++i)
    res.per_series_mse[static_cast<std::size_t>(i)] =
        series_count[static_cast<std::size_t>(i)] > 0
            ? series_se[static_cast<std::size_t>(i)] / series_count[static_cast<std::size_t>(i)]
            : 0.0;
  res.count = static_cast<long long>(count);
  return res;
}

// ---------------------------------------------------------------------------
// Training with early stopping; best-validation parameters are restored.

inline TrainHistory train(ForecastModel& model, const ExperimentData& data, const TrainSpec& spec,
                          std::uint64_t run_seed) {
  WindowSampler train_sampler = data.sampler(data.splits.train, 1);
  const bool has_val = data.splits.val.length() >= data.window + data.horizon;
  std::uint64_t seed_state = run_seed;
  model.dropout_rng = Rng(split_seed(seed_state));
  const std::uint64_t shuffle_base = split_seed(seed_state);

  TrainHistory hist;
  auto best_snapshot = model.store.snapshot_values();
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<double> batch_ms;
  const int group = train_sampler.mode() == BatchMode::Grouped ? data.prepared.n_series : 1;
  const int items_per_batch = std::max(1, spec.batch_size / std::max(1, group));

  for (int epoch = 0; epoch < spec.max_epochs; ++epoch) {
    model.training = true;
    std::uint64_t es = shuffle_base + static_cast<std::uint64_t>(epoch);
    auto items = train_sampler.shuffled_items(split_seed(es));
    long long n_batches = (static_cast<long long>(items.size()) + items_per_batch - 1) / items_per_batch;
    if (spec.max_batches_per_epoch > 0) n_batches = std::min<long long>(n_batches, spec.max_batches_per_epoch);
    double loss_sum = 0.0;
    for (long long bi = 0; bi < n_batches; ++bi) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t lo = static_cast<std::size_t>(bi) * items_per_batch;
      const std::size_t hi = std::min(items.size(), lo + items_per_batch);
      std::vector<long long> part(items.begin() + static_cast<long long>(lo),
                                  items.begin() + static_cast<long long>(hi));
      WindowBatch b = train_sampler.make_batch(part);
      Tape tape;
      auto bound = model.store.bind(tape);
      Tensor pred, loss;
      try {
        pred = model.forward(tape, bound, b);
        loss = mse_loss(tape, pred, b);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
      const double lv = (*loss.data)[0];
      if (!std::isfinite(lv))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += lv;
      auto grads = model.store.collect(tape.backward(loss), bound);
      adam_step(model.store, grads, spec.lr);
      const auto t1 = std::chrono::steady_clock::now();
      batch_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    model.training = false;
    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(std::max<long long>(1, n_batches));
    rec.val_mse = has_val ? evaluate(model, data, data.splits.val).mse : rec.train_loss;
    hist.epochs.push_back(rec);
    if (spec.verbose)
      std::fprintf(stderr, "epoch %d train %.6f val %.6f\n", epoch, rec.train_loss, rec.val_mse);
    if (rec.val_mse < best_val) {
      best_val = rec.val_mse;
      best_snapshot = model.store.snapshot_values();
      hist.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best > spec.patience) {
      break;
    }
  }
  model.store.restore_values(best_snapshot);
  hist.best_val_mse = best_val;
  const std::size_t warm = std::min<std::size_t>(5, batch_ms.size());
  double total = 0.0;
  for (std::size_t i = warm; i < batch_ms.size(); ++i) total += batch_ms[i];
  hist.mean_batch_ms = batch_ms.size() > warm ? total / static_cast<double>(batch_ms.size() - warm) : 0.0;
  return hist;
}

// ---------------------------------------------------------------------------
// Multi-seed experiments

struct RunResult {
  std::string fingerprint;
  ModelConfig config;
  std::vector<std::uint64_t> seeds;
  double mse_mean = 0.0, mse_std = 0.0;
  double mae_mean = 0.0, mae_std = 0.0;
  std::vector<double> per_step_mse, per_step_mae;  // means over seeds
  std::vector<double> per_seed_mse, per_seed_mae;
  std::vector<double> per_series_mse;  // mean over seeds
  double batch_time_ms = 0.0;
  double batches_per_s = 0.0;
  long long param_count = 0, param_shared = 0, param_per_series = 0;
  double best_val_mse = 0.0;  // mean over seeds
  std::string timestamp;
};

namespace detail {
inline std::pair<double, double> mean_pop_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size());  // population std over seeds
  return {m, std::sqrt(var)};
}
inline std::string iso8601_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}
inline int worker_count() {
  if (const char* env = std::getenv("TSBENCH_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 1) return n;
  }
  return 1;
}
}  // namespace detail

inline nlohmann::json run_result_json(const RunResult& r) {
  nlohmann::json j;
  j["timestamp"] = r.timestamp;
  j["fingerprint"] = r.fingerprint;
  j["config"] = serialize_model_config(r.config);
  j["seeds"] = r.seeds;
  j["mse"] = r.mse_mean;
  j["mse_std"] = r.mse_std;
  j["mae"] = r.mae_mean;
  j["mae_std"] = r.mae_std;
  j["per_step_mse"] = r.per_step_mse;
  j["per_step_mae"] = r.per_step_mae;
  j["per_seed_mse"] = r.per_seed_mse;
  j["per_seed_mae"] = r.per_seed_mae;
  j["batch_time_ms"] = r.batch_time_ms;
  j["batches_per_s"] = r.batches_per_s;
  j["param_count"] = r.param_count;
  j["param_shared"] = r.param_shared;
  j["param_per_series"] = r.param_per_series;
  j["best_val_mse"] = r.best_val_mse;
  return j;
}

inline void append_result_log(const RunResult& r, const std::string& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::invalid_argument("result log: cannot open " + path);
  out << run_result_json(r).dump() << "\n";
}

inline RunResult run_experiment(const ModelConfig& config, const SeriesCollection& raw,
                                const TrainSpec& spec, const SplitSpec& split_spec = {},
                                const std::string& log_path = "") {
  if (spec.seeds.empty()) throw std::invalid_argument("run_experiment: need at least one seed");
  ExperimentData data = prepare_data(raw, config, split_spec);
  const DataDims dims = dims_of(data);

  struct SeedOut {
    EvalResult eval;
    double batch_ms = 0.0, best_val = 0.0;
    long long params = 0, shared = 0, per_series = 0;
  };
  std::vector<SeedOut> outs(spec.seeds.size());
  auto run_one = [&](std::size_t k) {
    ModelConfig cfg = config;
    cfg.seed = spec.seeds[k];
    ForecastModel model = build_model(cfg, dims);
    TrainHistory hist = train(model, data, spec, spec.seeds[k]);
    SeedOut& o = outs[k];
    o.eval = evaluate(model, data, data.splits.test);
    o.batch_ms = hist.mean_batch_ms;
    o.best_val = hist.best_val_mse;
    o.params = model.store.param_count();
    o.shared = model.store.param_count_shared();
    o.per_series = model.store.param_count_per_series();
  };
  const int workers = detail::worker_count();
  if (workers > 1 && spec.seeds.size() > 1) {
    // Seeds run in isolated workers; nothing is shared but the read-only data.
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < spec.seeds.size(); ++k) {
      pool.emplace_back(run_one, k);
      if (static_cast<int>(pool.size()) == workers || k + 1 == spec.seeds.size()) {
        for (auto& th : pool) th.join();
        pool.clear();
      }
    }
  } else {
    for (std::size_t k = 0; k < spec.seeds.size(); ++k) run_one(k);
  }

  RunResult r;
  r.config = config;
  r.fingerprint = config_fingerprint(config);
  r.seeds = spec.seeds;
  for (const auto& o : outs) {
    r.per_seed_mse.push_back(o.eval.mse);
    r.per_seed_mae.push_back(o.eval.mae);
  }
  std::tie(r.mse_mean, r.mse_std) = detail::mean_pop_std(r.per_seed_mse);
  std::tie(r.mae_mean, r.mae_std) = detail::mean_pop_std(r.per_seed_mae);
  const int H = config.horizon;
  r.per_step_mse.assign(static_cast<std::size_t>(H), 0.0);
  r.per_step_mae.assign(static_cast<std::size_t>(H), 0.0);
  r.per_series_mse.assign(outs[0].eval.per_series_mse.size(), 0.0);
  double bt = 0.0, bv = 0.0;
  for (const auto& o : outs) {
    for (int h = 0; h < H; ++h) {
      r.per_step_mse[static_cast<std::size_t>(h)] += o.eval.per_step_mse[static_cast<std::size_t>(h)] / outs.size();
      r.per_step_mae[static_cast<std::size_t>(h)] += o.eval.per_step_mae[static_cast<std::size_t>(h)] / outs.size();
    }
    for (std::size_t i = 0; i < r.per_series_mse.size(); ++i)
      r.per_series_mse[i] += o.eval.per_series_mse[i] / outs.size();
    bt += o.batch_ms / outs.size();
    bv += o.best_val / outs.size();
  }
  r.batch_time_ms = bt;
  r.batches_per_s = bt > 0 ? 1000.0 / bt : 0.0;
  r.param_count = outs[0].params;
  r.param_shared = outs[0].shared;
  r.param_per_series = outs[0].per_series;
  r.best_val_mse = bv;
  r.timestamp = detail::iso8601_now();
  if (!log_path.empty()) append_result_log(r, log_path);
  return r;
}

// ---------------------------------------------------------------------------
// Paired ablations: both arms share seeds, data order, and every other config
// field. The D1 axis couples d1_mode with d_emb (the local-parameter feature
// is the pair); patch fields travel with `patching`.

enum class AblationAxis { D1LocalParams, D2Covariates, D4Spatial };

inline const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::D1LocalParams: return "D1-local-params";
    case AblationAxis::D2Covariates: return "D2-covariates";
    case AblationAxis::D4Spatial: return "D4-spatial";
  }
  return "?";
}

inline AblationAxis ablation_axis_from(const std::string& s) {
  if (s == "D1-local-params" || s == "d1") return AblationAxis::D1LocalParams;
  if (s == "D2-covariates" || s == "d2") return AblationAxis::D2Covariates;
  if (s == "D4-spatial" || s == "d4") return AblationAxis::D4Spatial;
  throw std::invalid_argument("unknown ablation axis '" + s + "'");
}

struct AblatePair {
  RunResult with_feature;     // hybrid / covariates / spatial attention
  RunResult without_feature;  // global / none / none
};

// Counts semantic field differences between two configs (coupled fields count
// once); the paired-ablation invariant requires exactly one.
inline int config_field_diff(const ModelConfig& a, const ModelConfig& b) {
  int diffs = 0;
  if (a.d1_mode != b.d1_mode || a.d_emb != b.d_emb) ++diffs;  // D1 feature
  if (a.scaler != b.scaler) ++diffs;
  if (a.revin != b.revin) ++diffs;
  if (a.covariates != b.covariates) ++diffs;
  if (a.temporal.kind != b.temporal.kind) ++diffs;
  if (a.temporal.d_h != b.temporal.d_h) ++diffs;
  if (a.temporal.layers != b.temporal.layers) ++diffs;
  if (a.temporal.dropout != b.temporal.dropout) ++diffs;
  if (a.temporal.kernel != b.temporal.kernel) ++diffs;
  if (a.temporal.heads != b.temporal.heads) ++diffs;
  if (a.temporal.pyramid != b.temporal.pyramid) ++diffs;
  if (a.temporal.local_window != b.temporal.local_window) ++diffs;
  if (a.spatial.kind != b.spatial.kind || a.spatial.heads != b.spatial.heads) ++diffs;  // D4 feature
  if (a.patching != b.patching || a.patch_len != b.patch_len || a.patch_stride != b.patch_stride) ++diffs;
  if (a.window != b.window) ++diffs;
  if (a.horizon != b.horizon) ++diffs;
  if (a.decoder != b.decoder) ++diffs;
  return diffs;
}

inline AblatePair ablate(const ModelConfig& config, AblationAxis axis, const SeriesCollection& raw,
                         const TrainSpec& spec, const SplitSpec& split_spec = {},
                         const std::string& log_path = "") {
  ModelConfig with_cfg = config, without_cfg = config;
  switch (axis) {
    case AblationAxis::D1LocalParams:
      with_cfg.d1_mode = D1Mode::Hybrid;
      if (with_cfg.d_emb <= 0) with_cfg.d_emb = 16;
      without_cfg.d1_mode = D1Mode::Global;
      without_cfg.d_emb = 0;
      break;
    case AblationAxis::D2Covariates:
      with_cfg.covariates = CovariateSet::Calendar;
      without_cfg.covariates = CovariateSet::None;
      break;
    case AblationAxis::D4Spatial:
      with_cfg.spatial.kind = SpatialKind::Attention;
      without_cfg.spatial.kind = SpatialKind::None;
      break;
  }
  if (config_field_diff(with_cfg, without_cfg) != 1)
    throw std::logic_error("ablate: arms differ in more than the toggled field");
  if (config_fingerprint(with_cfg) == config_fingerprint(without_cfg))
    throw std::logic_error("ablate: arms have identical fingerprints");
  AblatePair pair;
  pair.with_feature = run_experiment(with_cfg, raw, spec, split_spec, log_path);
  pair.without_feature = run_experiment(without_cfg, raw, spec, split_spec, log_path);
  return pair;
}

// ---------------------------------------------------------------------------
// Hidden-size sweep; ties break toward the smaller size.

struct SweepEntry {
  int hidden = 0;
  double val_mse = 0.0;
  double test_mse = 0.0;
};

struct SweepResult {
  ModelConfig best_config;
  std::vector<SweepEntry> entries;
};

inline SweepResult sweep_hidden(const ModelConfig& config, const SeriesCollection& raw,
                                const TrainSpec& spec, std::vector<int> grid = {},
                                const SplitSpec& split_spec = {}) {
  if (grid.empty()) grid = {16, 32, 64, 128, 256};
  std::sort(grid.begin(), grid.end());
  SweepResult out;
  double best = std::numeric_limits<double>::infinity();
  for (int h : grid) {
    ModelConfig cfg = config;
    cfg.temporal.d_h = h;
    cfg.spatial.d_h = h;
    RunResult r = run_experiment(cfg, raw, spec, split_spec);
    out.entries.push_back({h, r.best_val_mse, r.mse_mean});
    if (r.best_val_mse < best) {  // strict: ties keep the earlier (smaller) size
      best = r.best_val_mse;
      out.best_config = cfg;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Profiling: training-step wall clock with the first 5 batches excluded.

struct ProfileResult {
  double mean_batch_ms = 0.0;
  double std_batch_ms = 0.0;
  double batches_per_s = 0.0;
  long long param_count = 0;
  long long tape_bytes_peak = 0;  // in-process allocation estimate
};

inline ProfileResult profile(const ModelConfig& config, const SeriesCollection& raw,
                             int measured_batches = 50, int batch_size = 64) {
  ExperimentData data = prepare_data(raw, config, {});
  ForecastModel model = build_model(config, dims_of(data));
  model.training = true;
  WindowSampler sampler = data.sampler(data.splits.train, 1);
  const int group = sampler.mode() == BatchMode::Grouped ? data.prepared.n_series : 1;
  const int items_per_batch = std::max(1, batch_size / std::max(1, group));
  const auto items = sampler.all_items();
  std::vector<double> times;
  long long tape_peak = 0;
  const int total = measured_batches + 5;
  for (int i = 0; i < total; ++i) {
    std::vector<long long> part;
    for (int j = 0; j < items_per_batch; ++j)
      part.push_back(items[static_cast<std::size_t>((static_cast<long long>(i) * items_per_batch + j) %
                                                    items.size())]);
    WindowBatch b = sampler.make_batch(part);
    const auto t0 = std::chrono::steady_clock::now();
    Tape tape;
    auto bound = model.store.bind(tape);
    Tensor pred = model.forward(tape, bound, b);
    Tensor loss = mse_loss(tape, pred, b);
    auto grads = model.store.collect(tape.backward(loss), bound);
    adam_step(model.store, grads, 1e-3);
    const auto t1 = std::chrono::steady_clock::now();
    tape_peak = std::max(tape_peak, tape.bytes_peak());
    if (i >= 5) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  ProfileResult r;
  auto [m, s] = detail::mean_pop_std(times);
  r.mean_batch_ms = m;
  r.std_batch_ms = s;
  r.batches_per_s = m > 0 ? 1000.0 / m : 0.0;
  r.param_count = model.store.param_count();
  r.tape_bytes_peak = tape_peak;
  return r;
}

}  // namespace tsbench
