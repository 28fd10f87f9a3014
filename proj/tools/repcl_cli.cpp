// repcl: command-line driver for continual-learning experiments.
//
//   repcl run      --config cfg --output out [--seeds N] [--dataset PATH|synthetic] [--variant NAME]
//   repcl ablate   --config cfg --output out [--seeds N] [--dataset ...]
//   repcl evaluate --config cfg --checkpoint ckpt.json --output out
//   repcl diagnose --config cfg --checkpoint ckpt.json --output out [--task N]
//   repcl plot     --reports out [--output plots]
//
// Exit codes: 0 ok, 2 configuration/usage error, 3 runtime error. Errors are
// also printed to stderr as a single JSON object.

#include "repcl/config.hpp"
#include "repcl/diagnostics.hpp"
#include "repcl/errors.hpp"
#include "repcl/harness.hpp"
#include "repcl/metrics.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using namespace repcl;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct UsageError : ConfigError {
  using ConfigError::ConfigError;
};

void print_error(const std::string& type, const std::string& message) {
  std::cerr << nlohmann::json{{"error", type}, {"message", message}}.dump() << '\n';
}

struct Common {
  std::string config;
  std::string output;
  std::optional<int> seeds;
  std::optional<std::string> dataset;
};

ExperimentConfig resolve_config(const Common& c) {
  if (c.config.empty()) throw UsageError("--config is required. Recognised keys:\n" + schema_text());
  ExperimentConfig cfg = load_config(c.config);
  if (c.seeds) set_config_value(cfg, "seeds", std::to_string(*c.seeds));
  if (c.dataset) set_config_value(cfg, "dataset", *c.dataset);
  cfg.validate();
  if (cfg.dataset != "synthetic" && !fs::exists(cfg.dataset)) throw ConfigError("dataset file not found: " + cfg.dataset);
  return cfg;
}

fs::path require_output(const Common& c) {
  if (c.output.empty()) throw UsageError("--output is required");
  return c.output;
}

std::vector<nlohmann::json> run_variant(const ExperimentConfig& cfg, const Corpus& corpus, const std::string& variant,
                                        const fs::path& dir) {
  std::vector<nlohmann::json> reports;
  for (std::uint64_t seed : run_seeds(cfg)) {
    spdlog::info("variant {} seed {}: training {} tasks", variant, seed, cfg.num_tasks);
    RunOutcome run = run_experiment(cfg, corpus, variant, seed);
    write_run_outputs(run, dir, seed);
    spdlog::info("variant {} seed {}: final acc {:.4f}", variant, seed, run.report.at("final_acc").get<double>());
    reports.push_back(std::move(run.report));
  }
  write_json(dir / "aggregate.json", aggregate_reports(reports));
  return reports;
}

int cmd_run(const Common& c, const std::string& variant) {
  const ExperimentConfig cfg = resolve_config(c);
  const fs::path out = require_output(c);
  TrainConfig probe;
  apply_variant(probe, variant);
  const Corpus corpus = load_dataset(cfg);
  fs::create_directories(out);
  write_text(out / "config.txt", cfg.to_text());
  run_variant(cfg, corpus, variant, out);
  return kOk;
}

int cmd_ablate(const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const fs::path out = require_output(c);
  const Corpus corpus = load_dataset(cfg);
  fs::create_directories(out);
  write_text(out / "config.txt", cfg.to_text());
  std::map<std::string, std::vector<nlohmann::json>> by_variant;
  for (const std::string& v : ablation_variants()) by_variant[v] = run_variant(cfg, corpus, v, out / v);

  nlohmann::json summary = {{"variants", nlohmann::json::object()}, {"deltas_vs_full", nlohmann::json::object()}};
  for (const std::string& v : ablation_variants()) {
    summary["variants"][v] = aggregate_reports(by_variant[v]);
    if (v == "full") continue;
    summary["deltas_vs_full"][v] = {{"final_acc", paired_deltas(by_variant["full"], by_variant[v], "final_acc")},
                                    {"fr", paired_deltas(by_variant["full"], by_variant[v], "fr")}};
  }
  write_json(out / "ablation.json", summary);
  return kOk;
}

struct LoadedCheckpoint {
  ExperimentConfig cfg;
  Corpus corpus;
  Checkpoint ckpt;
  std::uint64_t seed;
  TaskStream stream;
};

LoadedCheckpoint load_for_checkpoint(const Common& c, const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  LoadedCheckpoint l{resolve_config(c), {}, {}, 0, {}};
  l.corpus = load_dataset(l.cfg);
  const nlohmann::json j = read_json(path);
  l.ckpt = checkpoint_from_json(j, encoder_for(l.cfg, l.corpus));
  if (!j.contains("seed")) throw ConfigError("checkpoint has no seed; it was not written by `repcl run`");
  l.seed = j.at("seed").get<std::uint64_t>();
  l.stream = split_tasks(l.corpus, l.cfg.num_tasks, l.cfg.classes_per_task, l.seed);
  return l;
}

/// Number of leading tasks whose classes are all covered by the checkpoint head.
int tasks_covered(const LoadedCheckpoint& l) {
  std::set<int> known(l.ckpt.class_order.begin(), l.ckpt.class_order.end());
  int n = 0;
  for (const TaskSpec& t : l.stream.tasks) {
    for (int c : t.label_set)
      if (!known.count(c)) return n;
    ++n;
  }
  return n;
}

Predictor checkpoint_predictor(Checkpoint& ck) {
  return [&ck](const Instance& x) {
    return ck.class_order[static_cast<std::size_t>(argmax(ck.model.logits(x)))];
  };
}

int cmd_evaluate(const Common& c, const std::string& checkpoint) {
  LoadedCheckpoint l = load_for_checkpoint(c, checkpoint);
  const fs::path out = require_output(c);
  const int seen = tasks_covered(l);
  if (seen == 0) throw ValidationError("checkpoint covers none of the stream's tasks");
  const Predictor p = checkpoint_predictor(l.ckpt);
  nlohmann::json per_task = nlohmann::json::array();
  for (int i = 0; i < seen; ++i) per_task.push_back(accuracy(p, l.stream.tasks[static_cast<std::size_t>(i)].test));
  const nlohmann::json result = {{"checkpoint", checkpoint},
                                 {"seed", l.seed},
                                 {"tasks_seen", seen},
                                 {"per_task_acc", per_task},
                                 {"acc_all_seen", accuracy_all_seen(p, l.stream, seen, Averaging::Micro)},
                                 {"acc_all_seen_macro", accuracy_all_seen(p, l.stream, seen, Averaging::Macro)}};
  write_json(out / "evaluation.json", result);
  std::cout << result.dump(2) << '\n';
  return kOk;
}

int cmd_diagnose(const Common& c, const std::string& checkpoint, int task) {
  LoadedCheckpoint l = load_for_checkpoint(c, checkpoint);
  const fs::path out = require_output(c);
  const int seen = tasks_covered(l);
  if (seen == 0) throw ValidationError("checkpoint covers none of the stream's tasks");
  if (task > seen) throw ConfigError(fmt::format("--task {} is beyond the {} task(s) the checkpoint has seen", task, seen));

  std::vector<Instance> test;
  for (int i = 0; i < seen; ++i)
    if (task == 0 || task == i + 1) {
      const auto& t = l.stream.tasks[static_cast<std::size_t>(i)].test;
      test.insert(test.end(), t.begin(), t.end());
    }

  const Model frozen(encoder_for(l.cfg, l.corpus), l.seed);
  const TaskMiOptions opts{l.cfg.diagnostics.mine, l.cfg.diagnostics.min_pairs};
  nlohmann::json summary = {{"checkpoint", checkpoint}, {"instances", test.size()}, {"mi", nlohmann::json::array()}};
  for (MiMode mode : {MiMode::XZ, MiMode::ZZPlus, MiMode::ZY}) {
    Rng rng = make_rng(l.seed, 0xD1A6 + static_cast<std::uint64_t>(mode));
    spdlog::info("estimating MI ({}) on {} instances", to_string(mode), test.size());
    const MineResult r = estimate_task_mi(l.ckpt.model, test, mode, opts, rng, &frozen.token_embeddings());
    const nlohmann::json d = diagnostics_json(mode, r);
    write_json(out / ("diagnostics_" + to_string(mode) + ".json"), d);
    summary["mi"].push_back(d);
  }
  const SpectrumReport s = eig_spectrum(l.ckpt.model.representations(test), l.cfg.diagnostics.top_k);
  write_text(out / "spectrum.csv", spectrum_csv(s));
  summary["spectrum"] = {{"eigenvalues", s.eigenvalues}, {"top_sum", s.top_sum(s.top_k)}, {"total_variance", s.total_variance}};
  write_json(out / "diagnose_summary.json", summary);
  return kOk;
}

int cmd_plot(const std::string& reports, const std::string& output) {
  if (reports.empty()) throw UsageError("--reports is required");
  const auto written = render_plots(reports, output.empty() ? reports : output);
  for (const auto& p : written) std::cout << p.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::default_logger()->clone("repcl"));
  spdlog::set_pattern("[%l] %v");
  if (const char* d = std::getenv("REPCL_DETERMINISTIC"); d != nullptr && std::string(d) == "1") Eigen::setNbThreads(1);

  CLI::App app{"Continual learning with representation-preserving objectives"};
  app.require_subcommand(1);
  Common common;
  std::string variant = "full", checkpoint, reports;
  int task = 0;

  auto add_common = [&](CLI::App* sub, bool with_seeds) {
    sub->add_option("--config", common.config, "experiment config (key = value)");
    sub->add_option("--output", common.output, "output directory");
    sub->add_option("--dataset", common.dataset, "JSONL corpus path or 'synthetic'");
    if (with_seeds) sub->add_option("--seeds", common.seeds, "number of seeds")->check(CLI::PositiveNumber);
  };
  CLI::App* run = app.add_subcommand("run", "train every seed and write reports");
  add_common(run, true);
  run->add_option("--variant", variant, "component variant")->check(CLI::IsMember(variant_names()));
  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid on shared streams");
  add_common(ablate, true);
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the seen tasks");
  add_common(evaluate, false);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint JSON written by run");
  CLI::App* diagnose = app.add_subcommand("diagnose", "MI estimates and eigen spectrum for a checkpoint");
  add_common(diagnose, false);
  diagnose->add_option("--checkpoint", checkpoint, "checkpoint JSON written by run");
  diagnose->add_option("--task", task, "restrict to one task's test set (1-based; 0 = all seen)")->check(CLI::NonNegativeNumber);
  CLI::App* plot = app.add_subcommand("plot", "render SVG plots from a results directory");
  plot->add_option("--reports", reports, "directory with reports");
  plot->add_option("--output", common.output, "plot directory (default: the reports directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    print_error("usage", e.what());
    return kConfigError;
  }

  try {
    if (*run) return cmd_run(common, variant);
    if (*ablate) return cmd_ablate(common);
    if (*evaluate) return cmd_evaluate(common, checkpoint);
    if (*diagnose) return cmd_diagnose(common, checkpoint, task);
    if (*plot) return cmd_plot(reports, common.output);
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    std::cerr << msg << '\n';
    print_error("usage", msg.substr(0, msg.find('\n')));
    return kConfigError;
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return kConfigError;
  } catch (const ParseError& e) {
    print_error("parse", e.what());
    return kRuntimeError;
  } catch (const ValidationError& e) {
    print_error("validation", e.what());
    return kRuntimeError;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kRuntimeError;
  }
  return kConfigError;
}
