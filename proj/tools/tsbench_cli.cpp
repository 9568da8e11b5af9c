// tsbench: run, compare and report forecasting experiments over the four
// design dimensions (model configuration, preprocessing/exogenous inputs,
// temporal operator, spatial operator) on CSV or synthetic datasets.
//
// Subcommands:
//   run     train/evaluate one configuration, append a JSONL record
//   ablate  paired comparison along one axis (d1 | d2 | d4)
//   report  markdown table / SVG scatter from result logs
//   synth   generate a synthetic dataset (CSV + metadata sidecar)
//   linear  closed-form ridge / dlinear baselines
//   card    derive and print the forecasting model card for a config
//
// Commands never mutate their input files. Worker-thread count for
// multi-seed runs comes from TSBENCH_WORKERS (default 1).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsbench/data.hpp"
#include "tsbench/harness.hpp"
#include "tsbench/linear.hpp"
#include "tsbench/model.hpp"
#include "tsbench/modelcard.hpp"
#include "tsbench/report.hpp"
#include "tsbench/synth.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot open " + path + " for writing");
  out << content;
}

struct CommonFlags {
  std::string config_path;
  std::string data_path;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int window = 0;   // 0 = keep config value
  int horizon = 0;
  int epochs = 30;
  int batch_size = 64;
  double lr = 1e-3;
  int patience = 5;
  std::string out_path;
};

tsbench::ModelConfig load_config(const CommonFlags& f) {
  auto parsed = tsbench::parse_model_config(read_file(f.config_path));
  if (f.window > 0) parsed.config.window = f.window;
  if (f.horizon > 0) parsed.config.horizon = f.horizon;
  tsbench::validate_model_config(parsed.config, parsed.explicit_keys);
  return parsed.config;
}

tsbench::TrainSpec train_spec_of(const CommonFlags& f) {
  tsbench::TrainSpec spec;
  spec.max_epochs = f.epochs;
  spec.batch_size = f.batch_size;
  spec.lr = f.lr;
  spec.patience = f.patience;
  spec.seeds = f.seeds;
  return spec;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool need_data) {
  cmd->add_option("--config", f.config_path, "model config file (key = value lines)")->required();
  auto* d = cmd->add_option("--data", f.data_path, "dataset CSV (sidecar metadata auto-attached)");
  if (need_data) d->required();
  cmd->add_option("--seeds", f.seeds, "run seeds (default: 1 2 3)");
  cmd->add_option("--window", f.window, "override config window length");
  cmd->add_option("--horizon", f.horizon, "override config horizon");
  cmd->add_option("--epochs", f.epochs, "max training epochs (default 30)");
  cmd->add_option("--batch", f.batch_size, "batch size (default 64)");
  cmd->add_option("--lr", f.lr, "learning rate (default 1e-3)");
  cmd->add_option("--patience", f.patience, "early-stop patience on val MSE (default 5)");
}

void print_run_result(const tsbench::RunResult& r) {
  std::printf("fingerprint %s\n", r.fingerprint.c_str());
  std::printf("test MSE %s  MAE %s\n", tsbench::format_mean_std(r.mse_mean, r.mse_std).c_str(),
              tsbench::format_mean_std(r.mae_mean, r.mae_std).c_str());
  std::printf("batch time %.2f ms (%.1f batches/s), parameters %lld (%lld shared, %lld per-series)\n",
              r.batch_time_ms, r.batches_per_s, static_cast<long long>(r.param_count),
              static_cast<long long>(r.param_shared), static_cast<long long>(r.param_per_series));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "tsbench: streamlined time-series forecasting benchmark.\n"
      "Multi-seed runs parallelize across TSBENCH_WORKERS worker threads (default 1).\n"
      "Commands read datasets; they never modify them."};
  app.require_subcommand(1);

  // run ----------------------------------------------------------------
  CommonFlags run_f;
  bool dry_run = false;
  std::string log_path = "results.jsonl";
  auto* run_cmd = app.add_subcommand("run", "train and evaluate one configuration");
  add_common(run_cmd, run_f, /*need_data=*/false);
  run_cmd->add_option("--out", log_path, "JSONL result log to append to (default results.jsonl)");
  run_cmd->add_flag("--dry-run", dry_run, "validate config and print its model card, no training");

  // ablate --------------------------------------------------------------
  CommonFlags ab_f;
  std::string axis = "d1";
  std::string ab_log = "results.jsonl";
  auto* ab_cmd = app.add_subcommand("ablate", "paired ablation along one design axis");
  add_common(ab_cmd, ab_f, /*need_data=*/true);
  ab_cmd->add_option("--axis", axis, "d1 | d2 | d4 (or the long names)")->required();
  ab_cmd->add_option("--out", ab_log, "JSONL result log to append to");

  // report --------------------------------------------------------------
  std::vector<std::string> report_inputs;
  std::vector<std::string> group_keys = {"temporal", "spatial"};
  std::string report_format = "markdown-table";
  std::string report_out;
  auto* rep_cmd = app.add_subcommand("report", "tables/figures from result logs");
  rep_cmd->add_option("--in", report_inputs, "JSONL result logs")->required();
  rep_cmd->add_option("--group", group_keys, "grouping keys (default: temporal spatial)");
  rep_cmd->add_option("--format", report_format, "markdown-table | svg-scatter");
  rep_cmd->add_option("--out", report_out, "output file (stdout when omitted)");

  // synth ---------------------------------------------------------------
  std::string gen_name;
  std::string synth_out = "synth.csv";
  int s_n = 8, s_t = 2048, s_k = 4, s_pool = 0;
  double s_sigma = 1.0, s_rho_lo = -0.8, s_rho_hi = 0.8;
  bool s_endpoints = false, s_independent = false;
  std::vector<double> s_means = {-1.0, 1.0};
  std::uint64_t s_seed = 1;
  auto* syn_cmd = app.add_subcommand("synth", "generate a synthetic dataset with known oracles");
  syn_cmd->add_option("--gen", gen_name, "local_ar | calendar_seasonal | spatial_mixing")->required();
  syn_cmd->add_option("--out", synth_out, "output CSV path (sidecar written next to it)");
  syn_cmd->add_option("--n", s_n, "series count (targets for spatial_mixing)");
  syn_cmd->add_option("--t", s_t, "step count");
  syn_cmd->add_option("--sigma", s_sigma, "noise standard deviation");
  syn_cmd->add_option("--rho-lo", s_rho_lo, "local_ar: lower rho bound");
  syn_cmd->add_option("--rho-hi", s_rho_hi, "local_ar: upper rho bound");
  syn_cmd->add_flag("--rho-endpoints", s_endpoints, "local_ar: draw rho from the two endpoints only");
  syn_cmd->add_option("--means", s_means, "calendar_seasonal: per-phase means");
  syn_cmd->add_option("--k", s_k, "spatial_mixing: neighbor count");
  syn_cmd->add_option("--pool", s_pool, "spatial_mixing: driver pool size (default 2k)");
  syn_cmd->add_flag("--independent", s_independent, "spatial_mixing: independent-series variant");
  syn_cmd->add_option("--seed", s_seed, "generator seed");

  // linear ----------------------------------------------------------------
  std::string lin_model = "ridge", lin_mode = "global", lin_data, lin_out, lin_weights_out;
  double lin_lambda = 0.1;
  int lin_w = 96, lin_h = 96, lin_ma = 25;
  auto* lin_cmd = app.add_subcommand("linear", "closed-form ridge / dlinear baselines");
  lin_cmd->add_option("--data", lin_data, "dataset CSV")->required();
  lin_cmd->add_option("--model", lin_model, "ridge | dlinear");
  lin_cmd->add_option("--mode", lin_mode, "global | local | hybrid");
  lin_cmd->add_option("--lambda", lin_lambda, "L2 strength (default 0.1)");
  lin_cmd->add_option("--window", lin_w, "window length");
  lin_cmd->add_option("--horizon", lin_h, "horizon");
  lin_cmd->add_option("--ma-kernel", lin_ma, "dlinear moving-average kernel (odd, default 25)");
  lin_cmd->add_option("--save-weights", lin_weights_out, "write fitted ridge weights (binary)");
  lin_cmd->add_option("--out", lin_out, "JSONL result log to append to");

  // card ------------------------------------------------------------------
  std::string card_config, card_out;
  int card_n_series = 1;
  auto* card_cmd = app.add_subcommand("card", "derive the forecasting model card for a config");
  card_cmd->add_option("--config", card_config, "model config file")->required();
  card_cmd->add_option("--series", card_n_series, "series count for parameter enumeration");
  card_cmd->add_option("--out", card_out, "output file (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const tsbench::ModelConfig cfg = load_config(run_f);
      if (dry_run) {
        tsbench::DataDims dims{1, 1, 0};
        if (!run_f.data_path.empty()) {
          const auto d = tsbench::load_dataset(run_f.data_path);
          dims = {d.collection.n_series, d.collection.d_x, d.collection.d_u};
        }
        std::cout << tsbench::render_card(tsbench::derive_card(cfg, dims));
        return 0;
      }
      if (run_f.data_path.empty())
        throw std::invalid_argument("run: --data is required unless --dry-run");
      const auto data = tsbench::load_dataset(run_f.data_path);
      const auto result =
          tsbench::run_experiment(cfg, data.collection, train_spec_of(run_f), {}, log_path);
      print_run_result(result);
      return 0;
    }

    if (ab_cmd->parsed()) {
      const tsbench::ModelConfig cfg = load_config(ab_f);
      const auto data = tsbench::load_dataset(ab_f.data_path);
      const auto ax = tsbench::ablation_axis_from(axis);
      const auto pair =
          tsbench::ablate(cfg, ax, data.collection, train_spec_of(ab_f), {}, ab_log);
      std::cout << tsbench::ablation_delta_table(pair.with_feature, pair.without_feature,
                                                 tsbench::to_string(ax));
      return 0;
    }

    if (rep_cmd->parsed()) {
      std::vector<tsbench::ReportRecord> records;
      for (const auto& p : report_inputs) {
        auto part = tsbench::load_result_log(p);
        records.insert(records.end(), part.begin(), part.end());
      }
      std::string doc;
      if (report_format == "markdown-table") {
        doc = tsbench::markdown_table(records, group_keys);
      } else if (report_format == "svg-scatter") {
        doc = tsbench::svg_scatter(records);
      } else {
        throw std::invalid_argument("report: unknown format '" + report_format + "'");
      }
      if (report_out.empty())
        std::cout << doc;
      else
        write_file(report_out, doc);
      return 0;
    }

    if (syn_cmd->parsed()) {
      tsbench::SynthResult result;
      nlohmann::json params;
      if (gen_name == "local_ar") {
        tsbench::LocalArSpec spec;
        spec.n_series = s_n;
        spec.n_steps = s_t;
        spec.sigma = s_sigma;
        spec.rho_lo = s_rho_lo;
        spec.rho_hi = s_rho_hi;
        spec.endpoints_only = s_endpoints;
        spec.seed = s_seed;
        result = tsbench::synth_local_ar(spec);
        params = {{"n", s_n}, {"t", s_t}, {"sigma", s_sigma}, {"rho_lo", s_rho_lo},
                  {"rho_hi", s_rho_hi}, {"endpoints_only", s_endpoints}, {"seed", s_seed}};
      } else if (gen_name == "calendar_seasonal") {
        tsbench::CalendarSeasonalSpec spec;
        spec.n_series = s_n;
        spec.n_steps = s_t;
        spec.phase_means = s_means;
        spec.sigma = s_sigma;
        spec.seed = s_seed;
        result = tsbench::synth_calendar_seasonal(spec);
        params = {{"n", s_n}, {"t", s_t}, {"means", s_means}, {"sigma", s_sigma}, {"seed", s_seed}};
      } else if (gen_name == "spatial_mixing") {
        tsbench::SpatialMixingSpec spec;
        spec.n_targets = s_n;
        spec.n_steps = s_t;
        spec.k_neighbors = s_k;
        spec.driver_pool = s_pool;
        spec.sigma = s_sigma;
        spec.mixing = !s_independent;
        spec.seed = s_seed;
        result = tsbench::synth_spatial_mixing(spec);
        params = {{"n", s_n}, {"t", s_t}, {"k", s_k}, {"pool", s_pool}, {"sigma", s_sigma},
                  {"mixing", !s_independent}, {"seed", s_seed}};
      } else {
        throw std::invalid_argument("synth: unknown generator '" + gen_name + "'");
      }
      tsbench::save_csv(result.collection, synth_out);
      tsbench::write_sidecar(result, params, synth_out);
      std::printf("wrote %s (%d series x %d steps), oracle informed %.4f blind %.4f\n",
                  synth_out.c_str(), result.collection.n_series, result.collection.n_steps,
                  result.oracle_informed, result.oracle_blind);
      return 0;
    }

    if (lin_cmd->parsed()) {
      const auto data = tsbench::load_dataset(lin_data);
      tsbench::SeriesCollection c = data.collection;
      const auto splits = tsbench::split(c, {});
      const auto scaler = tsbench::Scaler::fit(c, splits.train);
      c = scaler.apply(c);
      tsbench::LinearMode mode;
      if (lin_mode == "global") mode = tsbench::LinearMode::Global;
      else if (lin_mode == "local") mode = tsbench::LinearMode::Local;
      else if (lin_mode == "hybrid") mode = tsbench::LinearMode::Hybrid;
      else throw std::invalid_argument("linear: unknown mode '" + lin_mode + "'");
      double mse, mae;
      long long params_n;
      if (lin_model == "ridge") {
        const auto model = tsbench::fit_ridge_linear(c, splits.train, lin_w, lin_h, mode, lin_lambda);
        const auto ev = tsbench::evaluate_linear(model, c, splits.test,
                                                 [](const auto& m, const auto& w, int sid) {
                                                   return tsbench::ridge_linear_forward(m, w, sid);
                                                 });
        mse = ev.mse;
        mae = ev.mae;
        params_n = model.param_count();
        if (!lin_weights_out.empty()) tsbench::save_ridge_weights(model, lin_weights_out);
        if (model.used_pinv) std::fprintf(stderr, "note: singular system, pseudo-inverse path used\n");
      } else if (lin_model == "dlinear") {
        const auto model =
            tsbench::fit_dlinear(c, splits.train, lin_w, lin_h, mode, lin_ma, lin_lambda);
        const auto ev = tsbench::evaluate_linear(model, c, splits.test,
                                                 [](const auto& m, const auto& w, int sid) {
                                                   return tsbench::dlinear_forward(m, w, sid);
                                                 });
        mse = ev.mse;
        mae = ev.mae;
        params_n = model.param_count();
      } else {
        throw std::invalid_argument("linear: unknown model '" + lin_model + "'");
      }
      std::printf("%s %s: test MSE %.4f MAE %.4f, parameters %lld\n", lin_model.c_str(),
                  lin_mode.c_str(), mse, mae, params_n);
      if (!lin_out.empty()) {
        nlohmann::json j;
        j["timestamp"] = tsbench::detail::iso8601_now();
        j["model"] = lin_model + "-" + lin_mode;
        j["window"] = lin_w;
        j["horizon"] = lin_h;
        j["lambda"] = lin_lambda;
        j["mse"] = mse;
        j["mae"] = mae;
        j["param_count"] = params_n;
        std::ofstream out(lin_out, std::ios::app);
        out << j.dump() << "\n";
      }
      return 0;
    }

    if (card_cmd->parsed()) {
      auto parsed = tsbench::parse_model_config(read_file(card_config));
      tsbench::validate_model_config(parsed.config, parsed.explicit_keys);
      tsbench::DataDims dims{card_n_series, 1, 0};
      const auto card = tsbench::derive_card(parsed.config, dims);
      const auto violations = tsbench::validate_card(card, parsed.config);
      if (!violations.empty()) {
        for (const auto& v : violations) std::fprintf(stderr, "violation: %s\n", v.c_str());
        return 1;
      }
      const std::string doc = tsbench::render_card(card);
      if (card_out.empty())
        std::cout << doc;
      else
        write_file(card_out, doc);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
