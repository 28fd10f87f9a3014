#pragma once

#include "repcl/autograd.hpp"

#include <vector>

namespace repcl {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with per-group learning rates. Parameters are held by pointer, so the
/// owning Model must outlive the optimizer and must not be moved.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void add_group(const std::vector<Param*>& params, double lr);
  void step();
  void zero_grad();

 private:
  struct Slot {
    Param* param;
    double lr;
    Mat m, v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

}  // namespace repcl
