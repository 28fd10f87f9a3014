#pragma once

// Experiment driver: dataset loading, per-seed runs, report aggregation and
// static SVG plots.

#include "repcl/config.hpp"
#include "repcl/corpus.hpp"
#include "repcl/diagnostics.hpp"
#include "repcl/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace repcl {

/// Generates the synthetic corpus or loads the JSONL file named by cfg.dataset.
Corpus load_dataset(const ExperimentConfig& cfg);

/// Seeds base_seed .. base_seed + seeds - 1.
std::vector<std::uint64_t> run_seeds(const ExperimentConfig& cfg);

/// Encoder config with the vocabulary size taken from the corpus.
EncoderConfig encoder_for(const ExperimentConfig& cfg, const Corpus& corpus);

struct Task1Diagnostics {
  SpectrumReport spectrum;
  std::optional<MineResult> mi_zzplus;
  nlohmann::json to_json() const;
};

/// Eigen spectrum (and optionally I(Z; Z+)) of the task-1 test set.
Task1Diagnostics task1_diagnostics(Model& model, const TaskStream& stream, const DiagnosticsConfig& cfg,
                                   std::uint64_t seed, bool with_mi);

struct RunOutcome {
  ContinualRunState state;
  std::optional<Model> task1_model;
  TaskStream stream;
  nlohmann::json report;
};

/// One seed of one variant. The variant's switches are applied to a copy of
/// cfg before hashing, so every variant carries its own config hash.
RunOutcome run_experiment(const ExperimentConfig& cfg, const Corpus& corpus, const std::string& variant,
                          std::uint64_t seed);

/// Writes report_seed<N>.json, accuracy_seed<N>.csv, bank_seed<N>.json,
/// stream_seed<N>.json and checkpoints under dir.
void write_run_outputs(const RunOutcome& run, const std::filesystem::path& dir, std::uint64_t seed);

/// Checkpoint JSON plus the run seed (needed to rebuild the frozen embedding proxy).
nlohmann::json run_checkpoint_json(const Model& model, std::span<const int> class_order, std::uint64_t seed);

/// Mean and population stdev per stage, mean FR. All reports must share one
/// config hash (ConfigError otherwise).
nlohmann::json aggregate_reports(const std::vector<nlohmann::json>& reports);

/// Per-seed differences a - b of a scalar report field ("final_acc", "fr"),
/// matched on seed, plus their mean.
nlohmann::json paired_deltas(const std::vector<nlohmann::json>& a, const std::vector<nlohmann::json>& b,
                             const std::string& field);

double mean(std::span<const double> xs);
/// Population standard deviation.
double stdev(std::span<const double> xs);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);
std::string svg_bar_chart(const std::string& title, const std::string& y_label, const std::vector<std::string>& labels,
                          const std::vector<double>& values);

/// Renders every report, diagnostics and spectrum file found under `in` into `out`.
/// Returns the written paths.
std::vector<std::filesystem::path> render_plots(const std::filesystem::path& in, const std::filesystem::path& out);

nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace repcl
