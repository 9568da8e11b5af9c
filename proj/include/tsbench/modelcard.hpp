#pragma once

// Auxiliary forecasting model card: a structured summary of the four design
// dimensions derived mechanically from a ModelConfig, rendered as Markdown
// with a machine-readable front-matter block, and validated for
// card <-> config consistency.

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsbench/model.hpp"
#include "tsbench/optim.hpp"

namespace tsbench {

struct ForecastingModelCard {
  // Model setting
  std::string window_length;
  std::string transductive_or_inductive;
  std::string masking;
  // D1. Model configuration
  std::string d1_configuration;
  std::string d1_hybrid_parameters;
  // D2. Preprocessing and exogenous variables
  std::string d2_scaling;
  std::string d2_covariates;
  // D3. Temporal processing
  std::string d3_temporal_modules;
  std::string d3_complexity_steps;
  // D4. Spatial processing
  std::string d4_spatial_modules;
  std::string d4_complexity_nodes;
  // Optional free-form notes; omitted from the render when empty.
  std::string notes;

  bool operator==(const ForecastingModelCard&) const = default;
};

namespace detail {
inline std::string temporal_modules_text(const ModelConfig& c) {
  std::string base;
  switch (c.temporal.kind) {
    case TemporalKind::Mlp: base = "residual MLP over the window encoding"; break;
    case TemporalKind::Rnn: base = "gated recurrent layers"; break;
    case TemporalKind::Tcn: base = "causal dilated temporal convolutions"; break;
    case TemporalKind::Transformer: base = "patching-based Transformer layers"; break;
    case TemporalKind::Pyraformer: base = "pyramidal attention over mean-pooled scales"; break;
  }
  if (c.patching) return "convolutional encoding followed by " + base;
  return base;
}
inline std::string complexity_steps_text(const ModelConfig& c) {
  switch (c.temporal.kind) {
    case TemporalKind::Mlp: return "linear in the window length";
    case TemporalKind::Rnn: return "linear in the number of steps (recurrent scan)";
    case TemporalKind::Tcn: return "linear in the number of steps (dilated convolutions)";
    case TemporalKind::Transformer:
      return "the time and space complexity scales quadratically with the number of patches "
             "(self-attention)";
    case TemporalKind::Pyraformer:
      return "near-linear in the number of steps (windowed pyramidal attention)";
  }
  return "";
}
}  // namespace detail

// Mechanical mapping from a validated config. When the parameter store is
// given, the hybrid non-shared parameters are enumerated from its per-series
// partition; otherwise they are derived from the config and data dims.
inline ForecastingModelCard derive_card(const ModelConfig& c, const DataDims& dims = {},
                                        const ParameterStore* store = nullptr,
                                        bool data_has_mask = false) {
  ForecastingModelCard card;
  card.window_length = "fixed lookback window of " + std::to_string(c.window);
  const bool transductive = c.d1_mode == D1Mode::Hybrid || c.d1_mode == D1Mode::Local;
  card.transductive_or_inductive = transductive ? "transductive" : "inductive";
  card.masking = data_has_mask ? "masked-aware normalization statistics and loss" : "not applied/needed";

  switch (c.d1_mode) {
    case D1Mode::MultivariateJoint: card.d1_configuration = "multivariate model over the joint series"; break;
    case D1Mode::Global: card.d1_configuration = "global model"; break;
    case D1Mode::Hybrid: card.d1_configuration = "hybrid global-local model"; break;
    case D1Mode::Local: card.d1_configuration = "local model"; break;
  }
  if (c.d1_mode == D1Mode::Hybrid) {
    if (store) {
      std::string acc;
      for (const auto& name : store->per_series_names()) {
        const auto& p = store->at(name);
        if (!acc.empty()) acc += "; ";
        acc += name + " " + shape_str(p.value.shape);
      }
      card.d1_hybrid_parameters = acc;
    } else {
      card.d1_hybrid_parameters = "series embedding table (" + std::to_string(dims.n_series) + "x" +
                                  std::to_string(c.d_emb) + ")";
    }
  } else if (c.d1_mode == D1Mode::Local) {
    card.d1_hybrid_parameters = "not applicable (all parameters are series-specific)";
  } else {
    card.d1_hybrid_parameters = "not applicable";
  }

  if (c.scaler && c.revin)
    card.d2_scaling = "standard normalization (z-score) applied per series and in-batch RevInv "
                      "normalization";
  else if (c.scaler)
    card.d2_scaling = "standard normalization (z-score) applied per series";
  else if (c.revin)
    card.d2_scaling = "in-batch RevInv normalization";
  else
    card.d2_scaling = "none";
  card.d2_covariates = c.covariates == CovariateSet::None
                           ? "not used"
                           : "calendar features (past and future steps)";

  card.d3_temporal_modules = detail::temporal_modules_text(c);
  card.d3_complexity_steps = detail::complexity_steps_text(c);

  switch (c.spatial.kind) {
    case SpatialKind::None:
      card.d4_spatial_modules = "not applicable";
      card.d4_complexity_nodes = "not applicable";
      break;
    case SpatialKind::Attention:
      card.d4_spatial_modules = "multi-head attention across series";
      card.d4_complexity_nodes =
          "the time and space complexity scales quadratically with the number of series "
          "(spatial self-attention)";
      break;
    case SpatialKind::Mlp:
      card.d4_spatial_modules = "per-series feedforward (no cross-series paths)";
      card.d4_complexity_nodes = "linear in the number of series";
      break;
  }
  return card;
}

// ---------------------------------------------------------------------------
// Render / parse. The front matter mirrors every field; the body follows the
// card's section layout. Rendering is deterministic.

inline std::string render_card(const ForecastingModelCard& c) {
  std::ostringstream out;
  out << "---\n";
  out << "window_length: " << c.window_length << "\n";
  out << "transductive_or_inductive: " << c.transductive_or_inductive << "\n";
  out << "masking: " << c.masking << "\n";
  out << "d1_configuration: " << c.d1_configuration << "\n";
  out << "d1_hybrid_parameters: " << c.d1_hybrid_parameters << "\n";
  out << "d2_scaling: " << c.d2_scaling << "\n";
  out << "d2_covariates: " << c.d2_covariates << "\n";
  out << "d3_temporal_modules: " << c.d3_temporal_modules << "\n";
  out << "d3_complexity_steps: " << c.d3_complexity_steps << "\n";
  out << "d4_spatial_modules: " << c.d4_spatial_modules << "\n";
  out << "d4_complexity_nodes: " << c.d4_complexity_nodes << "\n";
  if (!c.notes.empty()) out << "notes: " << c.notes << "\n";
  out << "---\n\n";
  out << "# Forecasting Model Card\n\n";
  out << "**Model setting**\n\n";
  out << "- *Window length*: " << c.window_length << "\n";
  out << "- *Transductive or inductive (cold start)*: " << c.transductive_or_inductive << "\n";
  out << "- *Masking*: " << c.masking << "\n\n";
  out << "**D1. Model configuration**\n\n";
  out << "- *Global/local/hybrid*: " << c.d1_configuration << "\n";
  out << "- *Hybrid parameters (non-shared)*: " << c.d1_hybrid_parameters << "\n\n";
  out << "**D2. Preprocessing and exogenous variables**\n\n";
  out << "- *Scaling*: " << c.d2_scaling << "\n";
  out << "- *Covariates/exogenous variables*: " << c.d2_covariates << "\n\n";
  out << "**D3. Temporal processing**\n\n";
  out << "- *Temporal modules*: " << c.d3_temporal_modules << "\n";
  out << "- *Complexity scaling with steps*: " << c.d3_complexity_steps << "\n\n";
  out << "**D4. Spatial processing**\n\n";
  out << "- *Spatial modules*: " << c.d4_spatial_modules << "\n";
  out << "- *Complexity scaling with nodes*: " << c.d4_complexity_nodes << "\n";
  if (!c.notes.empty()) out << "\n**Notes**\n\n- " << c.notes << "\n";
  return out.str();
}

inline ForecastingModelCard parse_card(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "---")
    throw std::invalid_argument("parse_card: missing front matter");
  ForecastingModelCard c;
  while (std::getline(in, line) && line != "---") {
    const auto colon = line.find(": ");
    if (colon == std::string::npos)
      throw std::invalid_argument("parse_card: bad front-matter line '" + line + "'");
    const std::string key = line.substr(0, colon);
    const std::string val = line.substr(colon + 2);
    if (key == "window_length") c.window_length = val;
    else if (key == "transductive_or_inductive") c.transductive_or_inductive = val;
    else if (key == "masking") c.masking = val;
    else if (key == "d1_configuration") c.d1_configuration = val;
    else if (key == "d1_hybrid_parameters") c.d1_hybrid_parameters = val;
    else if (key == "d2_scaling") c.d2_scaling = val;
    else if (key == "d2_covariates") c.d2_covariates = val;
    else if (key == "d3_temporal_modules") c.d3_temporal_modules = val;
    else if (key == "d3_complexity_steps") c.d3_complexity_steps = val;
    else if (key == "d4_spatial_modules") c.d4_spatial_modules = val;
    else if (key == "d4_complexity_nodes") c.d4_complexity_nodes = val;
    else if (key == "notes") c.notes = val;
    else throw std::invalid_argument("parse_card: unknown key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Validation: field completeness and card <-> config consistency. Returns the
// violations (empty = pass).

inline std::vector<std::string> validate_card(const ForecastingModelCard& card, const ModelConfig& c,
                                              const ParameterStore* store = nullptr) {
  std::vector<std::string> v;
  auto require = [&](const std::string& field, const char* name) {
    if (field.empty()) v.push_back(std::string("missing field: ") + name);
  };
  require(card.window_length, "window length");
  require(card.transductive_or_inductive, "transductive or inductive");
  require(card.masking, "masking");
  require(card.d1_configuration, "D1 configuration");
  require(card.d1_hybrid_parameters, "D1 hybrid parameters");
  require(card.d2_scaling, "D2 scaling");
  require(card.d2_covariates, "D2 covariates");
  require(card.d3_temporal_modules, "D3 temporal modules");
  require(card.d3_complexity_steps, "D3 complexity scaling with steps");
  require(card.d4_spatial_modules, "D4 spatial modules");
  require(card.d4_complexity_nodes, "D4 complexity scaling with nodes");

  const bool transductive = c.d1_mode == D1Mode::Hybrid || c.d1_mode == D1Mode::Local;
  if (transductive && card.transductive_or_inductive != "transductive")
    v.push_back("config has series-identity parameters but card claims '" +
                card.transductive_or_inductive + "'");
  if (!transductive && card.transductive_or_inductive != "inductive")
    v.push_back("config has no series-identity parameters but card claims '" +
                card.transductive_or_inductive + "'");
  if (card.window_length.find(std::to_string(c.window)) == std::string::npos)
    v.push_back("window length field does not mention the configured window " +
                std::to_string(c.window));
  if (c.d1_mode == D1Mode::Hybrid &&
      (card.d1_hybrid_parameters.empty() || card.d1_hybrid_parameters.rfind("not applicable", 0) == 0))
    v.push_back("hybrid config requires concrete non-shared parameter names");
  if (c.d1_mode == D1Mode::Global && card.d1_hybrid_parameters != "not applicable")
    v.push_back("global config must list hybrid parameters as 'not applicable'");
  if (c.covariates == CovariateSet::None && card.d2_covariates != "not used")
    v.push_back("config uses no covariates but card says '" + card.d2_covariates + "'");
  if (c.covariates != CovariateSet::None && card.d2_covariates == "not used")
    v.push_back("config uses covariates but card says 'not used'");
  if (c.spatial.kind == SpatialKind::None && card.d4_spatial_modules != "not applicable")
    v.push_back("config has no spatial module but card says '" + card.d4_spatial_modules + "'");
  if (c.spatial.kind != SpatialKind::None && card.d4_spatial_modules == "not applicable")
    v.push_back("config has a spatial module but card says 'not applicable'");
  if (store) {
    const bool has_per_series = store->param_count_per_series() > 0;
    if (!transductive && has_per_series)
      v.push_back("card/config claim a global model but the store holds per-series parameters");
    if (c.d1_mode == D1Mode::Hybrid && !has_per_series)
      v.push_back("hybrid config but the store has no per-series parameters");
  }
  return v;
}

}  // namespace tsbench
