#pragma once

// Accuracy over seen classes and the forgetting rate.

#include "repcl/corpus.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace repcl {

/// Lower-triangular accuracy table: at(j, i) is the accuracy on task i's test
/// set after training through task j (both 1-based, i <= j).
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(int num_tasks = 0);

  int num_tasks() const { return n_; }
  void set(int j, int i, double value);
  double at(int j, int i) const;
  bool has(int j, int i) const;
  /// Number of leading rows with every i <= j entry present.
  int rows_filled() const;

  /// Ragged rows: row j holds j entries.
  nlohmann::json to_json() const;
  static AccuracyMatrix from_json(const nlohmann::json& j);
  /// Header "stage,1,...,n"; one row per stage; empty cells above the diagonal.
  std::string to_csv() const;

 private:
  std::size_t slot(int j, int i) const;
  int n_;
  std::vector<std::optional<double>> cells_;
};

enum class Averaging { Micro, Macro };

/// Maps an instance to a predicted class id.
using Predictor = std::function<int(const Instance&)>;

/// Accuracy on the pooled test sets of tasks 1..upto. Micro pools every test
/// instance; macro averages the per-task accuracies.
double accuracy_all_seen(const Predictor& predict, const TaskStream& stream, int upto, Averaging avg = Averaging::Micro);

/// Plain accuracy on a single instance list (0 for an empty list).
double accuracy(const Predictor& predict, std::span<const Instance> xs);

/// FR_k = mean_{i<k} ( max_{l in 1..k-1} a(l, i) - a(k, i) ). Not clamped;
/// nullopt for k < 2.
std::optional<double> forgetting_rate(const AccuracyMatrix& a, int k);

}  // namespace repcl
