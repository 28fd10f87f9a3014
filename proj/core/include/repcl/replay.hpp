#pragma once

// Exemplar memory and the adversarial memory-replay stage.

#include "repcl/autograd.hpp"
#include "repcl/corpus.hpp"
#include "repcl/encoder.hpp"
#include "repcl/optim.hpp"
#include "repcl/rng.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <unordered_map>
#include <vector>

namespace repcl {

struct KMeansResult {
  std::vector<int> assignment;
  Mat centroids;
  int iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below `tol` or `max_iter` is reached. Empty clusters keep their
/// previous centroid.
KMeansResult kmeans(const Mat& points, int k, Rng& rng, int max_iter = 100, double tol = 1e-6);

/// Clusters `representations` (one row per instance) into min(budget, n)
/// groups and keeps, per non-empty cluster, the instance nearest its centroid.
/// Distance ties go to the lowest corpus index.
std::vector<Instance> select_exemplars(std::span<const Instance> instances, const Mat& representations, int budget,
                                       Rng& rng);

class MemoryBank {
 public:
  explicit MemoryBank(int budget_per_class = 10);

  int budget() const { return budget_; }
  /// Replaces the exemplars of class c. Throws when over budget or mislabeled.
  void store(int label, std::vector<Instance> exemplars);
  const std::map<int, std::vector<Instance>>& classes() const { return store_; }
  std::vector<const Instance*> all() const;
  std::size_t size() const;
  bool empty() const { return store_.empty(); }

  /// {"budget_per_class": B, "classes": {"<class id>": [corpus index, ...]}}
  nlohmann::json to_json() const;
  static MemoryBank from_json(const nlohmann::json& j, const Corpus& corpus);

 private:
  int budget_;
  std::map<int, std::vector<Instance>> store_;
};

enum class DeltaInit { Zero, UniformScaled };
enum class NormScope { Batch, PerExample };

struct AdversarialConfig {
  int steps = 2;
  double step_size = 0.1;
  double epsilon = 0.2;
  DeltaInit init = DeltaInit::Zero;
  NormScope norm = NormScope::Batch;

  void validate() const;
};

/// Frobenius norm over every entry of a batch perturbation.
double frobenius_norm(std::span<const Mat> delta);

/// Radial projection onto the epsilon ball (batch-wide or per example).
void project_to_ball(std::vector<Mat>& delta, double epsilon, NormScope scope);

struct FreeLBResult {
  /// (1/K) sum_t L_t
  double loss = 0.0;
  std::vector<double> step_losses;
  /// ||delta_t|| for t = 0..K (the last one is the post-update perturbation).
  std::vector<double> delta_norms;
  /// delta_0..delta_{K-1}, only filled when requested.
  std::vector<std::vector<Mat>> deltas;
};

/// Runs K ascent steps on embedding perturbations, accumulating
/// (1/K) * grad_theta L(F(x + delta_t), y) into the model's parameter grads.
FreeLBResult freelb_loss(Model& model, std::span<const Instance* const> batch, std::span<const int> targets,
                         const AdversarialConfig& cfg, Rng& rng, Rng* dropout_rng = nullptr,
                         bool record_deltas = false);

/// Batch-mean cross-entropy with the given perturbations held fixed
/// (no gradient bookkeeping). Used to check the accumulated FreeLB gradient.
double perturbed_loss(Model& model, std::span<const Instance* const> batch, std::span<const int> targets,
                      std::span<const Mat> delta);

/// Clean batch-mean cross-entropy on a tape (for composing with other losses).
Var batch_cross_entropy(Model& model, Tape& tape, std::span<const Instance* const> batch,
                        std::span<const int> targets, const PassOptions& opts = {});

struct ReplayOptions {
  int epochs = 1;
  int batch_size = 16;
  double lr_encoder = 1e-4;
  double lr_head = 1e-3;
  AdamConfig adam;
  bool adversarial = true;
  AdversarialConfig adv;
};

struct ReplayLog {
  std::vector<double> epoch_loss;
  std::size_t visited = 0;
};

/// L_replay = L_ce + L_adv over seeded shuffles of the whole bank.
/// `class_to_row` maps class ids to classifier rows.
ReplayLog replay_stage(Model& model, const MemoryBank& bank, const std::unordered_map<int, int>& class_to_row,
                       const ReplayOptions& opts, Rng& shuffle_rng, Rng& adv_rng, Rng* dropout_rng = nullptr);

}  // namespace repcl
