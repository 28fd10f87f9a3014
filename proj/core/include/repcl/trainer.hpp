#pragma once

// Two-stage continual training over a task stream.

#include "repcl/contrastive.hpp"
#include "repcl/corpus.hpp"
#include "repcl/encoder.hpp"
#include "repcl/metrics.hpp"
#include "repcl/optim.hpp"
#include "repcl/replay.hpp"
#include "repcl/rng.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

namespace repcl {

struct TrainConfig {
  double lambda_con = 0.05;
  double lambda_xmlm = 0.1;
  int queue_size = 512;
  double temperature = 0.05;
  double momentum = 0.99;
  double mask_prob = 0.3;
  /// Clear the feature queue when a new task starts.
  bool queue_reset_per_task = true;
  AdversarialConfig adv;
  int memory_budget = 10;

  int epochs_initial = 10;
  int epochs_replay = 5;
  int batch_size = 16;
  double lr_encoder = 1e-4;
  double lr_head = 1e-3;
  AdamConfig adam;

  bool no_con = false;
  bool no_xmlm = false;
  bool no_adv = false;
  bool mlm_instead_of_xmlm = false;
  bool no_replay = false;
  /// Replaces both representation losses with a self-view InfoNCE term
  /// (two dropout passes of the same instance), weighted by lambda_con.
  bool infomax_variant = false;

  bool use_con() const { return !no_con && !infomax_variant && lambda_con > 0.0; }
  bool use_xmlm() const { return !no_xmlm && !infomax_variant && lambda_xmlm > 0.0; }
  bool use_infomax() const { return infomax_variant && lambda_con > 0.0; }

  void validate() const;
  nlohmann::json to_json() const;
};

struct StepLog {
  double ce = 0.0;
  double con = 0.0;
  double xmlm = 0.0;
  double total = 0.0;
};

struct TaskLog {
  int task = 0;
  std::vector<double> initial_epoch_loss;
  std::vector<double> replay_epoch_loss;
  std::size_t bank_size = 0;
  double acc_micro = 0.0;
  double acc_macro = 0.0;
};

/// Independent random streams so that toggling one component does not shift
/// the draws of another.
struct RunRngs {
  explicit RunRngs(std::uint64_t seed);
  Rng head, shuffle, dropout, partner, mask, kmeans, replay_shuffle, adversarial;
};

struct ContinualRunState {
  ContinualRunState(const EncoderConfig& enc, const TrainConfig& cfg, std::uint64_t seed);

  Model model;
  /// Only present while representation losses need it.
  std::optional<MomentumState> momentum;
  FeatureQueue queue;
  MemoryBank bank;
  AccuracyMatrix accuracy;
  std::vector<TaskLog> logs;
  /// Classifier row r predicts class_order[r].
  std::vector<int> class_order;
  std::unordered_map<int, int> class_to_row;
  RunRngs rngs;
  /// Per-step losses of the most recent initial stage.
  std::vector<StepLog> steps;

  int predict(const Instance& x);
  Predictor predictor();
};

/// Appends the task's classes to the classifier.
void expand_head(ContinualRunState& state, const TaskSpec& task);

/// Minimizes L_ce + lambda_con * L_con + lambda_xmlm * L_xmlm over the task's
/// training data. Resets the queue and re-seeds the momentum branch first.
void train_initial_stage(ContinualRunState& state, const TaskSpec& task, const TrainConfig& cfg);

/// Picks exemplars for every class of the task with the current encoder.
void update_memory(ContinualRunState& state, const TaskSpec& task, const TrainConfig& cfg);

/// epochs_replay passes of L_ce + L_adv over the memory bank.
void train_replay_stage(ContinualRunState& state, const TrainConfig& cfg);

/// Fills accuracy row j (1-based) from the test sets of tasks 1..j.
void evaluate_stage(ContinualRunState& state, const TaskStream& stream, int j);

using TaskObserver = std::function<void(int task, ContinualRunState& state)>;

/// Runs every task: expand head, initial stage, memory update, replay,
/// evaluation. The observer is called after each task's evaluation.
ContinualRunState run_continual(const TaskStream& stream, const EncoderConfig& enc, const TrainConfig& cfg,
                                std::uint64_t seed, const TaskObserver& observer = {});

/// {"accuracy_matrix", "acc_per_stage", "acc_per_stage_macro", "fr", "fr_per_stage",
///  "final_acc", "seed", "task_logs"}. The harness adds config and provenance fields.
nlohmann::json run_report(const ContinualRunState& state, std::uint64_t seed);

}  // namespace repcl
