#pragma once

// Experiment configuration: a flat key=value text format with a typed schema.
//
//   # comment
//   preset = fewrel
//   lambda2 = 0.2
//   encoder.embed_dim = 32
//
// Unknown keys, duplicate keys and malformed values are ConfigErrors. A
// `preset` line is applied before every other key regardless of position.

#include "repcl/corpus.hpp"
#include "repcl/diagnostics.hpp"
#include "repcl/encoder.hpp"
#include "repcl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace repcl {

struct DiagnosticsConfig {
  MineConfig mine;
  int min_pairs = 512;
  int top_k = 20;
  /// Compute task-1 MI and spectrum during `run` (adds a MINE fit per seed).
  bool task1 = false;
};

struct ExperimentConfig {
  std::string preset = "none";
  /// "synthetic" or a JSONL path.
  std::string dataset = "synthetic";
  SyntheticOptions synthetic;
  std::uint64_t synthetic_seed = 7;
  int num_tasks = 10;
  int classes_per_task = 2;
  int seeds = 5;
  std::uint64_t base_seed = 1;
  EncoderConfig encoder;
  TrainConfig train;
  DiagnosticsConfig diagnostics;

  void validate() const;
  /// Canonical text: every key in schema order, one `key = value` per line.
  std::string to_text() const;
  nlohmann::json to_json() const;
  /// 16 hex digits of FNV-1a 64 over to_text().
  std::string hash() const;
};

struct SchemaField {
  std::string key;
  std::string type;
  std::string help;
};

const std::vector<SchemaField>& config_schema();
/// Human-readable schema listing (used for usage errors).
std::string schema_text();

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets one key; throws ConfigError for unknown keys or bad values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Hyperparameter presets: "fewrel", "tacred", "maven", "hwu64", "toy" and "none".
void apply_preset(ExperimentConfig& cfg, const std::string& name);
const std::vector<std::string>& preset_names();

/// Component switches: full, no_con, no_xmlm, no_adv, mlm, no_replay,
/// infomax, backbone (replay with plain CE only), ce_only (sequential fine-tuning).
void apply_variant(TrainConfig& cfg, const std::string& variant);
const std::vector<std::string>& variant_names();
/// The grid run by `ablate`.
const std::vector<std::string>& ablation_variants();

std::uint64_t fnv1a64(const std::string& s);

}  // namespace repcl
