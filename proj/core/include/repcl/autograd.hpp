#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation performed during one forward pass. Calling
// backward() on a scalar node walks the tape in reverse and accumulates
// gradients into intermediate nodes and into the Param objects that were
// bound as leaves. Tapes are single-use: build, backward, discard.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace repcl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// A named trainable tensor together with its accumulated gradient.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  /// When disabled, params are bound as constants and nothing is recorded for
  /// backward. Used for momentum-branch and inference passes.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf that receives a gradient but is not bound to a Param.
  Var leaf(Mat value);
  /// Leaf bound to a Param; backward adds into param.grad. Binding the same
  /// Param twice on one tape returns the same node.
  Var param(Param& p);

  /// Seeds d(out)/d(out) = seed (out must be 1x1) and back-propagates.
  void backward(Var out, double seed = 1.0);

  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }

  using BackwardFn = std::function<void(Tape&, int self)>;

  /// Records a node produced by an operation. `inputs` decide whether the
  /// result requires a gradient; `fn` is only kept if it does.
  Var record(Mat value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Mat value, std::span<const Var> inputs, BackwardFn fn);

  /// Gradient accumulator for a node, allocated lazily.
  Mat& grad_ref(int id);
  Mat& grad_ref(Var v) { return grad_ref(v.id); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    BackwardFn backward;
    Param* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> bound_;
  bool grad_enabled_;
};

// Arithmetic ------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
/// Elementwise product.
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);

// Nonlinearities ----------------------------------------------------------------

Var gelu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var relu(Var a);
Var softmax_rows(Var a);
/// Row-wise layer normalisation with learned gain and bias (both 1 x m).
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
/// Row-wise x / (||x|| + eps).
Var l2_normalize_rows(Var a, double eps = 1e-12);
/// Multiplies by a fixed 0/1 mask scaled by 1/(1-rate).
Var dropout_mask(Var a, const Mat& mask);

// Shape -------------------------------------------------------------------------

Var cols(Var a, Eigen::Index start, Eigen::Index n);
Var rows(Var a, Eigen::Index start, Eigen::Index n);
Var hconcat(std::span<const Var> parts);
Var vconcat(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const int> ids);
Var mean_rows(Var a);
Var sum_all(Var a);
Var mean_all(Var a);

// Losses ------------------------------------------------------------------------

/// Mean over rows of softmax cross-entropy between logits and integer targets.
Var cross_entropy(Var logits, std::span<const int> targets);

/// Convenience: stack 1 x m row Vars.
inline Var stack_rows(const std::vector<Var>& rows_in) { return vconcat(rows_in); }

}  // namespace repcl
