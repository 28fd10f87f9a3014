#include "repcl/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace repcl {

const Mat& Var::value() const { return tape->value(id); }
const Mat& Var::grad() const { return tape->grad_ref(id); }

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, nullptr, grad_enabled_});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Param& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
  bound_.emplace(&p, static_cast<int>(nodes_.size()));
  nodes_.push_back(Node{p.value, Mat(), nullptr, grad_enabled_ ? &p : nullptr, grad_enabled_});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Mat value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (nodes_[v.id].requires_grad) {
        needs = true;
        break;
      }
    }
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs ? std::move(fn) : nullptr, nullptr, needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var out, double seed) {
  if (out.tape != this) throw std::logic_error("backward: variable belongs to another tape");
  if (nodes_[out.id].value.size() != 1) throw std::logic_error("backward: output must be a scalar");
  if (!nodes_[out.id].requires_grad) return;
  grad_ref(out.id)(0, 0) += seed;
  for (int id = out.id; id >= 0; --id) {
    if (!nodes_[id].requires_grad || nodes_[id].grad.size() == 0) continue;
    if (nodes_[id].backward) nodes_[id].backward(*this, id);
    if (nodes_[id].param != nullptr) nodes_[id].param->grad += nodes_[id].grad;
  }
}

namespace {

bool needs(Tape& t, Var v) { return t.requires_grad(v); }

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("variables from different tapes");
}

}  // namespace

Var add(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, int self) {
    const Mat g = tp.grad(self);
    if (needs(tp, a)) tp.grad_ref(a) += g;
    if (needs(tp, b)) tp.grad_ref(b) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, int self) {
    const Mat g = tp.grad(self);
    if (needs(tp, a)) tp.grad_ref(a) += g;
    if (needs(tp, b)) tp.grad_ref(b) -= g;
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Tape& t = *a.tape;
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& tp, int self) {
    const Mat g = tp.grad(self);
    if (needs(tp, a)) tp.grad_ref(a) += g;
    if (needs(tp, row)) tp.grad_ref(row) += g.colwise().sum();
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, {a}, [a, s](Tape& tp, int self) { tp.grad_ref(a) += tp.grad(self) * s; });
}

Var hadamard(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, int self) {
    const Mat g = tp.grad(self);
    if (needs(tp, a)) tp.grad_ref(a) += g.cwiseProduct(tp.value(b.id));
    if (needs(tp, b)) tp.grad_ref(b) += g.cwiseProduct(tp.value(a.id));
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Tape& t = *a.tape;
  Mat out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat g = tp.grad(self);
    if (needs(tp, a)) tp.grad_ref(a).noalias() += g * tp.value(b.id).transpose();
    if (needs(tp, b)) tp.grad_ref(b).noalias() += tp.value(a.id).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Tape& t = *a.tape;
  Mat out = a.value() * b.value().transpose();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, int self) {
    const Mat g = tp.grad(self);
    if (needs(tp, a)) tp.grad_ref(a).noalias() += g * tp.value(b.id);
    if (needs(tp, b)) tp.grad_ref(b).noalias() += g.transpose() * tp.value(a.id);
  });
}

Var gelu(Var a) {
  // tanh approximation; smooth everywhere, which keeps finite differences honest.
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  Tape& t = *a.tape;
  const Mat& x = a.value();
  Mat out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); });
  return t.record(std::move(out), {a}, [a](Tape& tp, int self) {
    const Mat& xv = tp.value(a.id);
    Mat d = xv.unaryExpr([](double v) {
      const double u = c * (v + k * v * v * v);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * k * v * v);
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    });
    tp.grad_ref(a) += tp.grad(self).cwiseProduct(d);
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().array().tanh().matrix();
  return t.record(std::move(out), {a}, [a](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    tp.grad_ref(a) += tp.grad(self).cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

Var exp(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().array().exp().matrix();
  return t.record(std::move(out), {a},
                  [a](Tape& tp, int self) { tp.grad_ref(a) += tp.grad(self).cwiseProduct(tp.value(self)); });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value().cwiseMax(0.0);
  return t.record(std::move(out), {a}, [a](Tape& tp, int self) {
    const Mat& x = tp.value(a.id);
    tp.grad_ref(a) += tp.grad(self).cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Mat out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, int self) {
    const Mat& y = tp.value(self);
    const Mat& g = tp.grad(self);
    Mat ga(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    tp.grad_ref(a) += ga;
  });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  check_same_tape(a, gain);
  check_same_tape(a, bias);
  Tape& t = *a.tape;
  const Mat& x = a.value();
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  Mat xhat(n, m);
  Vec inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((x.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Mat out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), {a, gain, bias},
                  [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                    const Mat& g = tp.grad(self);
                    if (needs(tp, gain)) tp.grad_ref(gain) += g.cwiseProduct(xhat).colwise().sum();
                    if (needs(tp, bias)) tp.grad_ref(bias) += g.colwise().sum();
                    if (needs(tp, a)) {
                      const RowVec& gam = tp.value(gain.id).row(0);
                      const double m_d = static_cast<double>(xhat.cols());
                      Mat ga(xhat.rows(), xhat.cols());
                      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                        const RowVec dxhat = g.row(r).cwiseProduct(gam);
                        const double s1 = dxhat.sum();
                        const double s2 = dxhat.dot(xhat.row(r));
                        ga.row(r) = inv_std(r) / m_d *
                                    (m_d * dxhat.array() - s1 - xhat.row(r).array() * s2).matrix();
                      }
                      tp.grad_ref(a) += ga;
                    }
                  });
}

Var l2_normalize_rows(Var a, double eps) {
  Tape& t = *a.tape;
  const Mat& x = a.value();
  Vec norms = x.rowwise().norm();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r) = x.row(r) / (norms(r) + eps);
  return t.record(std::move(out), {a}, [a, norms = std::move(norms), eps](Tape& tp, int self) {
    const Mat& x = tp.value(a.id);
    const Mat& g = tp.grad(self);
    Mat ga(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double n = norms(r);
      const double d = n + eps;
      // y = x / d(x); dy/dx = I/d - x x^T / (n d^2)
      const double gx = g.row(r).dot(x.row(r));
      ga.row(r) = g.row(r) / d;
      if (n > 0.0) ga.row(r) -= x.row(r) * (gx / (n * d * d));
    }
    tp.grad_ref(a) += ga;
  });
}

Var dropout_mask(Var a, const Mat& mask) {
  Tape& t = *a.tape;
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw std::invalid_argument("dropout_mask: shape mismatch");
  return t.record(a.value().cwiseProduct(mask), {a},
                  [a, mask](Tape& tp, int self) { tp.grad_ref(a) += tp.grad(self).cwiseProduct(mask); });
}

Var cols(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = *a.tape;
  if (start < 0 || start + n > a.cols()) throw std::out_of_range("cols: slice out of range");
  return t.record(a.value().middleCols(start, n), {a},
                  [a, start, n](Tape& tp, int self) { tp.grad_ref(a).middleCols(start, n) += tp.grad(self); });
}

Var rows(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = *a.tape;
  if (start < 0 || start + n > a.rows()) throw std::out_of_range("rows: slice out of range");
  return t.record(a.value().middleRows(start, n), {a},
                  [a, start, n](Tape& tp, int self) { tp.grad_ref(a).middleRows(start, n) += tp.grad(self); });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat: no inputs");
  Tape& t = *parts[0].tape;
  const Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("hconcat: row mismatch");
    c += p.cols();
  }
  Mat out(r, c);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ins](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index o = 0;
    for (const Var& p : ins) {
      const Eigen::Index w = tp.value(p.id).cols();
      if (needs(tp, p)) tp.grad_ref(p) += g.middleCols(o, w);
      o += w;
    }
  });
}

Var vconcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("vconcat: no inputs");
  Tape& t = *parts[0].tape;
  const Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("vconcat: column mismatch");
    r += p.rows();
  }
  Mat out(r, c);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ins](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Eigen::Index o = 0;
    for (const Var& p : ins) {
      const Eigen::Index h = tp.value(p.id).rows();
      if (needs(tp, p)) tp.grad_ref(p) += g.middleRows(o, h);
      o += h;
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = *table.tape;
  const Mat& tab = table.value();
  Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows()) throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx)](Tape& tp, int self) {
    const Mat& g = tp.grad(self);
    Mat& gt = tp.grad_ref(table);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const double n = static_cast<double>(a.rows());
  return t.record(a.value().colwise().mean(), {a}, [a, n](Tape& tp, int self) {
    const RowVec g = tp.grad(self).row(0) / n;
    tp.grad_ref(a).rowwise() += g;
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& tp, int self) { tp.grad_ref(a).array() += tp.grad(self)(0, 0); });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum_all(a), 1.0 / n);
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = *logits.tape;
  const Mat& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) throw std::invalid_argument("cross_entropy: target count");
  const Eigen::Index n = z.rows();
  Mat probs(n, z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = targets[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw std::out_of_range("cross_entropy: target out of range");
    const double m = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - m).exp().matrix();
    const double s = probs.row(r).sum();
    probs.row(r) /= s;
    loss += -(z(r, y) - m - std::log(s));
  }
  Mat out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  std::vector<int> ys(targets.begin(), targets.end());
  return t.record(std::move(out), {logits}, [logits, probs = std::move(probs), ys = std::move(ys)](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0) / static_cast<double>(ys.size());
    Mat d = probs;
    for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Eigen::Index>(r), ys[r]) -= 1.0;
    tp.grad_ref(logits) += d * g;
  });
}

}  // namespace repcl
