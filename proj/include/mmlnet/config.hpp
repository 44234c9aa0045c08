#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmlnet/corruption.hpp"

namespace mmlnet::config {

/// Full experiment description. Every field appears in the config file under
/// its section; unknown keys are rejected so typos cannot silently fall back
/// to defaults.
struct ExperimentConfig {
  // [model]
  std::string backend = "toy";  // toy | external
  int d = 64;
  int layers = 2;
  int heads = 4;
  int vocab_size = 4096;
  int patch_size = 32;
  int image_side = 224;
  double adapter_alpha = 0.5;
  int adapter_hidden = 0;  // 0 = d/4
  int proj_dim = 0;        // 0 = d/2

  // [loss]
  double tau = 0.1;
  double lambda_c = 1.0;
  double lambda_m = 0.5;
  bool include_positive_in_denominator = false;

  // [train]
  std::uint64_t seed = 42;
  int epochs = 15;
  int batch_size = 16;
  double lr_main = 1e-4;
  double lr_encoder = 3e-6;
  double weight_decay = 0.005;
  double dropout = 0.3;
  double grad_clip = 0.0;  // 0 = off
  double val_fraction = 0.1;
  std::vector<std::string> ablation;  // sorted, duplicate-free toggle names

  // [data]
  corruption::MissingRates rates;

  int effective_adapter_hidden() const { return adapter_hidden > 0 ? adapter_hidden : d / 4; }
  int effective_proj_dim() const { return proj_dim > 0 ? proj_dim : d / 2; }
  bool has_ablation(const std::string& toggle) const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// The recognized ablation toggles, in canonical order.
const std::vector<std::string>& allowed_ablations();

/// Table-3/Fig-6 style display name for a toggle, e.g. drop_weighting ->
/// "w/o Weight".
std::string ablation_label(const std::string& toggle);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical INI rendering: fixed section and key order, %.17g reals.
/// parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);
void save_config(const ExperimentConfig& config, const std::string& path);

/// Applies "key=value" or "section.key=value" overrides in order. A bare key
/// must be unique across sections.
ExperimentConfig apply_overrides(ExperimentConfig config,
                                 const std::vector<std::string>& overrides);

/// Rejects structurally invalid configurations (bad ranges, unknown backend
/// or toggle, indivisible dimensions).
void validate(const ExperimentConfig& config);

/// FNV-1a over sorted "section.key=value" lines: stable under reordering,
/// sensitive to every field. 16 hex chars.
std::string config_hash(const ExperimentConfig& config);

}  // namespace mmlnet::config
