#include "repcl/contrastive.hpp"

#include "repcl/errors.hpp"

#include <cmath>
#include <limits>

namespace repcl {

void ema_update(std::span<Param* const> main, std::span<Param* const> momentum, double eta) {
  if (main.size() != momentum.size()) throw ShapeError("ema_update: parameter lists differ in length");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("ema decay must be in [0, 1]");
  for (std::size_t i = 0; i < main.size(); ++i) {
    const Mat& src = main[i]->value;
    Mat& dst = momentum[i]->value;
    if (src.rows() != dst.rows() || src.cols() != dst.cols())
      throw ShapeError("ema_update: shape mismatch for " + main[i]->name);
    dst = eta * dst + (1.0 - eta) * src;
  }
}

MomentumState::MomentumState(const Model& main, double decay) : model_(main), decay_(decay) {
  if (decay < 0.0 || decay > 1.0) throw ConfigError("ema decay must be in [0, 1]");
}

void MomentumState::reset(const Model& main) { model_ = main; }

void MomentumState::update(Model& main) {
  const auto src = main.momentum_params();
  const auto dst = model_.momentum_params();
  ema_update(src, dst, decay_);
}

FeatureQueue::FeatureQueue(std::size_t capacity, Eigen::Index dim) : capacity_(capacity), dim_(dim) {
  if (dim < 1) throw ConfigError("feature queue dimension must be positive");
}

void FeatureQueue::enqueue(const Mat& features, std::span<const int> labels) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ShapeError("enqueue: feature and label counts differ");
  if (features.rows() > 0 && features.cols() != dim_) throw ShapeError("enqueue: feature dimension mismatch");
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    features_.push_back(features.row(i));
    labels_.push_back(labels[static_cast<std::size_t>(i)]);
    ++total_enqueued_;
    if (labels_.size() > capacity_) {
      features_.pop_front();
      labels_.pop_front();
      ++total_evicted_;
    }
  }
}

void FeatureQueue::clear() {
  total_evicted_ += labels_.size();
  features_.clear();
  labels_.clear();
}

Mat FeatureQueue::features() const {
  Mat out(static_cast<Eigen::Index>(features_.size()), dim_);
  for (std::size_t i = 0; i < features_.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features_[i];
  return out;
}

double supinfonce_value(const Mat& anchors, std::span<const int> anchor_labels, const Mat& candidates,
                        std::span<const int> candidate_labels, double tau, Mat* grad_anchors, int* active_anchors) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (anchors.rows() != static_cast<Eigen::Index>(anchor_labels.size()) ||
      candidates.rows() != static_cast<Eigen::Index>(candidate_labels.size()))
    throw ShapeError("supinfonce: label counts do not match features");
  if (candidates.rows() > 0 && candidates.cols() != anchors.cols())
    throw ShapeError("supinfonce: anchor and candidate dimensions differ");

  if (grad_anchors != nullptr) grad_anchors->setZero(anchors.rows(), anchors.cols());
  const Mat sims = candidates.rows() > 0 ? Mat(anchors * candidates.transpose() / tau) : Mat(anchors.rows(), 0);

  double total = 0.0;
  int active = 0;
  std::vector<Eigen::Index> pos, neg;
  Mat grads_local = Mat::Zero(anchors.rows(), anchors.cols());
  for (Eigen::Index a = 0; a < anchors.rows(); ++a) {
    pos.clear();
    neg.clear();
    for (Eigen::Index c = 0; c < candidates.rows(); ++c)
      (candidate_labels[static_cast<std::size_t>(c)] == anchor_labels[static_cast<std::size_t>(a)] ? pos : neg).push_back(c);
    if (pos.empty()) continue;
    ++active;

    // log-sum-exp over the negatives, shared by every positive's denominator.
    double lse_neg = -std::numeric_limits<double>::infinity();
    if (!neg.empty()) {
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index n : neg) m = std::max(m, sims(a, n));
      double s = 0.0;
      for (Eigen::Index n : neg) s += std::exp(sims(a, n) - m);
      lse_neg = m + std::log(s);
    }

    // d l / d s for every candidate.
    RowVec ds = RowVec::Zero(candidates.rows());
    for (Eigen::Index p : pos) {
      const double sp = sims(a, p);
      const double hi = std::max(sp, lse_neg);
      const double log_den = hi + std::log(std::exp(sp - hi) + std::exp(lse_neg - hi));
      total += log_den - sp;
      const double prob_p = std::exp(sp - log_den);
      ds(p) += prob_p - 1.0;
      for (Eigen::Index n : neg) ds(n) += std::exp(sims(a, n) - log_den);
    }
    if (grad_anchors != nullptr && candidates.rows() > 0) grads_local.row(a) = ds * candidates / tau;
  }
  if (active_anchors != nullptr) *active_anchors = active;
  if (active == 0) return 0.0;
  if (grad_anchors != nullptr) *grad_anchors = grads_local / static_cast<double>(active);
  return total / static_cast<double>(active);
}

Var supinfonce_loss(Var anchors, std::span<const int> anchor_labels, Var candidates,
                    std::span<const int> candidate_labels, double tau) {
  Tape& t = *anchors.tape;
  Mat grad;
  const double value = supinfonce_value(anchors.value(), anchor_labels, candidates.value(), candidate_labels, tau,
                                        t.grad_enabled() ? &grad : nullptr);
  Mat out(1, 1);
  out(0, 0) = value;
  // Only the anchors are listed as inputs: the candidates stay detached.
  return t.record(std::move(out), {anchors}, [anchors, grad = std::move(grad)](Tape& tp, int self) {
    tp.grad_ref(anchors) += grad * tp.grad(self)(0, 0);
  });
}

}  // namespace repcl
