#pragma once

// Momentum branch, feature queue and the supervised InfoNCE objective.

#include "repcl/autograd.hpp"
#include "repcl/encoder.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

namespace repcl {

/// theta' <- eta * theta' + (1 - eta) * theta, elementwise over matched params.
void ema_update(std::span<Param* const> main, std::span<Param* const> momentum, double eta);

/// Gradient-free copy of the main encoder + projection head.
class MomentumState {
 public:
  MomentumState(const Model& main, double decay);

  /// Re-initialises from the current main branch.
  void reset(const Model& main);
  void update(Model& main);

  Model& model() { return model_; }
  double decay() const { return decay_; }

 private:
  Model model_;
  double decay_;
};

/// Bounded FIFO of detached (feature, label) pairs.
class FeatureQueue {
 public:
  FeatureQueue(std::size_t capacity, Eigen::Index dim);

  /// Appends rows in order, evicting the oldest entries beyond capacity.
  void enqueue(const Mat& features, std::span<const int> labels);
  void clear();

  std::size_t size() const { return labels_.size(); }
  std::size_t capacity() const { return capacity_; }
  Eigen::Index dim() const { return dim_; }
  bool empty() const { return labels_.empty(); }

  /// Entries oldest-first as a (size x dim) matrix.
  Mat features() const;
  std::vector<int> labels() const { return {labels_.begin(), labels_.end()}; }

  std::uint64_t total_enqueued() const { return total_enqueued_; }
  std::uint64_t total_evicted() const { return total_evicted_; }

 private:
  std::size_t capacity_;
  Eigen::Index dim_;
  std::deque<RowVec> features_;
  std::deque<int> labels_;
  std::uint64_t total_enqueued_ = 0;
  std::uint64_t total_evicted_ = 0;
};

/// Value (and optionally the anchor gradient) of the supervised InfoNCE loss.
///
/// For anchor a with positives P(a) and negatives N(a) among the candidates,
/// with s = a.c / tau:
///   l(a) = sum_{p in P(a)} -log( e^{s_p} / (e^{s_p} + sum_{n in N(a)} e^{s_n}) )
/// Other positives never enter a positive's denominator. The loss is the mean
/// of l(a) over anchors with at least one positive; 0 when there are none.
double supinfonce_value(const Mat& anchors, std::span<const int> anchor_labels, const Mat& candidates,
                        std::span<const int> candidate_labels, double tau, Mat* grad_anchors = nullptr,
                        int* active_anchors = nullptr);

/// Tape form. The candidates are treated as constants: no gradient ever flows
/// into them, whatever their origin.
Var supinfonce_loss(Var anchors, std::span<const int> anchor_labels, Var candidates,
                    std::span<const int> candidate_labels, double tau);

}  // namespace repcl
