#include "repcl/optim.hpp"

#include <cmath>

namespace repcl {

void Adam::add_group(const std::vector<Param*>& params, double lr) {
  for (Param* p : params)
    slots_.push_back(Slot{p, lr, Mat::Zero(p->value.rows(), p->value.cols()), Mat::Zero(p->value.rows(), p->value.cols())});
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Slot& s : slots_) {
    Param& p = *s.param;
    // A parameter may have grown (classifier expansion) since the group was added.
    if (s.m.rows() != p.value.rows() || s.m.cols() != p.value.cols()) {
      Mat m = Mat::Zero(p.value.rows(), p.value.cols());
      Mat v = Mat::Zero(p.value.rows(), p.value.cols());
      const Eigen::Index r = std::min(m.rows(), s.m.rows());
      const Eigen::Index c = std::min(m.cols(), s.m.cols());
      m.topLeftCorner(r, c) = s.m.topLeftCorner(r, c);
      v.topLeftCorner(r, c) = s.v.topLeftCorner(r, c);
      s.m = std::move(m);
      s.v = std::move(v);
    }
    Mat g = p.grad;
    if (cfg_.weight_decay > 0.0) g += cfg_.weight_decay * p.value;
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.value.array() -= s.lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg_.eps);
  }
}

void Adam::zero_grad() {
  for (Slot& s : slots_) s.param->zero_grad();
}

}  // namespace repcl
