#pragma once

// Mutual-information estimation (MINE) and covariance spectra of representations.

#include "repcl/autograd.hpp"
#include "repcl/corpus.hpp"
#include "repcl/encoder.hpp"
#include "repcl/optim.hpp"
#include "repcl/rng.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <vector>

namespace repcl {

struct MineConfig {
  int epochs = 100;
  int batch_size = 256;
  int hidden = 128;
  double lr = 1e-3;
  /// Decay of the running mean of the marginal partition term.
  double ema_decay = 0.99;
  /// Fraction of the curve (taken from the end) averaged into the estimate.
  double tail_fraction = 0.1;

  void validate() const;
};

struct MineResult {
  double estimate = 0.0;
  /// Full-sample Donsker-Varadhan bound after every epoch (nats).
  std::vector<double> curve;
};

/// Statistics network T(u, v): two ReLU hidden layers and a scalar output.
class MineEstimator {
 public:
  MineEstimator(Eigen::Index dim_u, Eigen::Index dim_v, const MineConfig& cfg, Rng& rng);

  /// Trains on jointly drawn rows (u_i, v_i); marginals come from shuffling v
  /// within each batch. Inputs are standardized per dimension first.
  MineResult fit(const Mat& u, const Mat& v, Rng& rng);

  /// DV bound mean T(u, v) - log mean exp T(u, v[perm]) on already
  /// standardized inputs.
  double dv_bound(const Mat& u, const Mat& v, std::span<const int> perm);

  double ema_of_exp_marginal() const { return ema_; }

 private:
  Var forward(Tape& tape, const Mat& uv);
  MineConfig cfg_;
  Param w1_, b1_, w2_, b2_, w3_, b3_;
  double ema_ = 0.0;
  bool ema_init_ = false;
};

/// Trains a fresh estimator on (u_i, v_i) pairs. Fewer than 2 rows is an input error.
MineResult mine_estimate(const Mat& u, const Mat& v, const MineConfig& cfg, Rng& rng);

/// Column-wise standardization; constant columns are centered only.
Mat standardize_columns(const Mat& x);

enum class MiMode { XZ, ZZPlus, ZY };
std::string to_string(MiMode m);
MiMode mi_mode_from_string(const std::string& s);

struct TaskMiOptions {
  MineConfig mine;
  /// Same-class pairs are resampled until at least this many exist.
  int min_pairs = 512;
};

/// Builds the mode's paired samples from `instances` and runs MINE.
/// x_z pairs (mean of frozen initial token embeddings, z), z_zplus pairs
/// representations of distinct same-class instances, z_y pairs (z, one-hot y).
/// `frozen_embeddings` is required for x_z.
MineResult estimate_task_mi(Model& model, std::span<const Instance> instances, MiMode mode, const TaskMiOptions& opts,
                            Rng& rng, const Mat* frozen_embeddings = nullptr);

/// Paired samples used by estimate_task_mi (exposed for tests).
std::pair<Mat, Mat> mi_pairs(const Mat& reps, std::span<const Instance> instances, MiMode mode, int min_pairs, Rng& rng,
                             const Mat* frozen_embeddings = nullptr);

/// Mean of the frozen embedding rows of the instance's tokens.
RowVec embedding_mean_proxy(const Mat& frozen_embeddings, const Instance& x);

struct SpectrumReport {
  /// Descending, non-negative, truncated to top_k.
  std::vector<double> eigenvalues;
  int top_k = 0;
  /// Trace of the covariance (sum over the full spectrum).
  double total_variance = 0.0;

  double top_sum(int k) const;
};

/// Eigenvalues of the (1/N) covariance of mean-centered rows. N < 2 is an input error.
SpectrumReport eig_spectrum(const Mat& representations, int top_k);

/// {"mode", "estimate_nats", "curve", "proxy"}
nlohmann::json diagnostics_json(MiMode mode, const MineResult& r);
/// "rank,eigenvalue" rows, rank starting at 1.
std::string spectrum_csv(const SpectrumReport& s);

}  // namespace repcl
