#include "repcl/diagnostics.hpp"

#include "repcl/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace repcl {

void MineConfig::validate() const {
  if (epochs < 1) throw ConfigError("MINE epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("MINE batch size must be >= 2");
  if (hidden < 1) throw ConfigError("MINE hidden width must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("MINE learning rate must be positive");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("MINE ema decay must be in [0, 1)");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) throw ConfigError("MINE tail fraction must be in (0, 1]");
}

namespace {

Param he_init(std::string name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  Mat w(in, out);
  for (Eigen::Index j = 0; j < out; ++j)
    for (Eigen::Index i = 0; i < in; ++i) w(i, j) = n(rng);
  return Param(std::move(name), std::move(w));
}

double log_mean_exp(const Mat& t) {
  const double m = t.maxCoeff();
  return m + std::log((t.array() - m).exp().mean());
}

std::vector<int> permutation(std::size_t n, Rng& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

Mat hcat(const Mat& a, const Mat& b) {
  Mat out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

}  // namespace

MineEstimator::MineEstimator(Eigen::Index dim_u, Eigen::Index dim_v, const MineConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const Eigen::Index h = cfg_.hidden;
  w1_ = he_init("mine.w1", dim_u + dim_v, h, rng);
  b1_ = Param("mine.b1", Mat::Zero(1, h));
  w2_ = he_init("mine.w2", h, h, rng);
  b2_ = Param("mine.b2", Mat::Zero(1, h));
  w3_ = he_init("mine.w3", h, 1, rng);
  b3_ = Param("mine.b3", Mat::Zero(1, 1));
}

Var MineEstimator::forward(Tape& tape, const Mat& uv) {
  Var x = tape.constant(uv);
  x = relu(add_row(matmul(x, tape.param(w1_)), tape.param(b1_)));
  x = relu(add_row(matmul(x, tape.param(w2_)), tape.param(b2_)));
  return add_row(matmul(x, tape.param(w3_)), tape.param(b3_));
}

double MineEstimator::dv_bound(const Mat& u, const Mat& v, std::span<const int> perm) {
  Mat vp(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) vp.row(i) = v.row(perm[static_cast<std::size_t>(i)]);
  Tape tape(false);
  const double joint = forward(tape, hcat(u, v)).value().mean();
  const double marg = log_mean_exp(forward(tape, hcat(u, vp)).value());
  return joint - marg;
}

MineResult MineEstimator::fit(const Mat& u_raw, const Mat& v_raw, Rng& rng) {
  if (u_raw.rows() != v_raw.rows()) throw ShapeError("MINE: u and v must have the same number of rows");
  if (u_raw.rows() < 2) throw InputError("MINE needs at least 2 samples");
  const Mat u = standardize_columns(u_raw);
  const Mat v = standardize_columns(v_raw);
  const auto n = static_cast<std::size_t>(u.rows());

  Adam adam(AdamConfig{});
  adam.add_group({&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}, cfg_.lr);

  MineResult res;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const auto batches = make_batches(n, cfg_.batch_size, rng);
    for (const auto& b : batches) {
      if (b.size() < 2) continue;
      const auto m = static_cast<Eigen::Index>(b.size());
      Mat joint(m, u.cols() + v.cols());
      Mat marg(m, u.cols() + v.cols());
      const std::vector<int> shuffle = permutation(b.size(), rng);
      for (Eigen::Index i = 0; i < m; ++i) {
        const int r = b[static_cast<std::size_t>(i)];
        const int s = b[static_cast<std::size_t>(shuffle[static_cast<std::size_t>(i)])];
        joint.row(i) << u.row(r), v.row(r);
        marg.row(i) << u.row(r), v.row(s);
      }
      adam.zero_grad();
      Tape tape;
      const Var tj = mean_all(forward(tape, joint));
      const Var em = mean_all(exp(forward(tape, marg)));
      const double batch_em = em.scalar();
      if (!ema_init_) {
        ema_ = batch_em;
        ema_init_ = true;
      } else {
        ema_ = cfg_.ema_decay * ema_ + (1.0 - cfg_.ema_decay) * batch_em;
      }
      // Gradient of -(E_joint[T] - E_marg[e^T] / ema): the bias-corrected DV gradient.
      const Var loss = sub(scale(em, 1.0 / ema_), tj);
      if (!std::isfinite(loss.scalar())) throw std::runtime_error("MINE diverged");
      tape.backward(loss);
      adam.step();
    }
    res.curve.push_back(dv_bound(u, v, permutation(n, rng)));
  }
  const auto tail = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg_.tail_fraction * static_cast<double>(res.curve.size()))));
  res.estimate = std::accumulate(res.curve.end() - static_cast<std::ptrdiff_t>(tail), res.curve.end(), 0.0) /
                 static_cast<double>(tail);
  return res;
}

MineResult mine_estimate(const Mat& u, const Mat& v, const MineConfig& cfg, Rng& rng) {
  if (u.rows() < 2 || v.rows() < 2) throw InputError("MINE needs at least 2 samples");
  MineEstimator est(u.cols(), v.cols(), cfg, rng);
  return est.fit(u, v, rng);
}

Mat standardize_columns(const Mat& x) {
  Mat out = x.rowwise() - x.colwise().mean();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(out.rows()));
    if (sd > 1e-12) out.col(j) /= sd;
  }
  return out;
}

std::string to_string(MiMode m) {
  switch (m) {
    case MiMode::XZ: return "x_z";
    case MiMode::ZZPlus: return "z_zplus";
    case MiMode::ZY: return "z_y";
  }
  return "?";
}

MiMode mi_mode_from_string(const std::string& s) {
  if (s == "x_z") return MiMode::XZ;
  if (s == "z_zplus") return MiMode::ZZPlus;
  if (s == "z_y") return MiMode::ZY;
  throw ConfigError("unknown MI mode: " + s);
}

RowVec embedding_mean_proxy(const Mat& frozen_embeddings, const Instance& x) {
  if (x.tokens.empty()) throw InputError("empty token sequence");
  RowVec m = RowVec::Zero(frozen_embeddings.cols());
  for (int t : x.tokens) {
    if (t < 0 || t >= frozen_embeddings.rows()) throw InputError("token id outside the embedding table");
    m += frozen_embeddings.row(t);
  }
  return m / static_cast<double>(x.tokens.size());
}

std::pair<Mat, Mat> mi_pairs(const Mat& reps, std::span<const Instance> instances, MiMode mode, int min_pairs, Rng& rng,
                             const Mat* frozen_embeddings) {
  const auto n = static_cast<Eigen::Index>(instances.size());
  if (reps.rows() != n) throw ShapeError("one representation per instance required");
  switch (mode) {
    case MiMode::XZ: {
      if (!frozen_embeddings) throw InputError("x_z mode needs the frozen embedding table");
      Mat x(n, frozen_embeddings->cols());
      for (Eigen::Index i = 0; i < n; ++i) x.row(i) = embedding_mean_proxy(*frozen_embeddings, instances[static_cast<std::size_t>(i)]);
      return {x, reps};
    }
    case MiMode::ZY: {
      std::map<int, int> col;
      for (const Instance& x : instances) col.emplace(x.label, 0);
      int c = 0;
      for (auto& [_, idx] : col) idx = c++;
      Mat y = Mat::Zero(n, c);
      for (Eigen::Index i = 0; i < n; ++i) y(i, col.at(instances[static_cast<std::size_t>(i)].label)) = 1.0;
      return {reps, y};
    }
    case MiMode::ZZPlus: {
      std::map<int, std::vector<int>> members;
      for (Eigen::Index i = 0; i < n; ++i) members[instances[static_cast<std::size_t>(i)].label].push_back(static_cast<int>(i));
      std::vector<int> eligible;
      for (const auto& [_, idx] : members)
        if (idx.size() >= 2) eligible.insert(eligible.end(), idx.begin(), idx.end());
      if (eligible.empty()) throw InputError("z_zplus needs a class with at least 2 instances");
      std::vector<std::pair<int, int>> pairs;
      while (pairs.size() < static_cast<std::size_t>(std::max(min_pairs, 2))) {
        for (int i : eligible) {
          const auto& same = members.at(instances[static_cast<std::size_t>(i)].label);
          int j = i;
          while (j == i) j = same[uniform_index(rng, same.size())];
          pairs.emplace_back(i, j);
        }
      }
      Mat a(static_cast<Eigen::Index>(pairs.size()), reps.cols());
      Mat b(static_cast<Eigen::Index>(pairs.size()), reps.cols());
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        a.row(static_cast<Eigen::Index>(p)) = reps.row(pairs[p].first);
        b.row(static_cast<Eigen::Index>(p)) = reps.row(pairs[p].second);
      }
      return {a, b};
    }
  }
  throw std::logic_error("unreachable");
}

MineResult estimate_task_mi(Model& model, std::span<const Instance> instances, MiMode mode, const TaskMiOptions& opts,
                            Rng& rng, const Mat* frozen_embeddings) {
  const Mat reps = model.representations(instances);
  const auto [u, v] = mi_pairs(reps, instances, mode, opts.min_pairs, rng, frozen_embeddings);
  return mine_estimate(u, v, opts.mine, rng);
}

double SpectrumReport::top_sum(int k) const {
  const auto n = std::min<std::size_t>(eigenvalues.size(), static_cast<std::size_t>(std::max(k, 0)));
  return std::accumulate(eigenvalues.begin(), eigenvalues.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
}

SpectrumReport eig_spectrum(const Mat& representations, int top_k) {
  if (representations.rows() < 2) throw InputError("spectrum needs at least 2 representations");
  if (top_k < 1) throw InputError("top_k must be positive");
  const Mat centered = representations.rowwise() - representations.colwise().mean();
  const Mat cov = centered.transpose() * centered / static_cast<double>(representations.rows());
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  for (double& e : ev) e = std::max(e, 0.0);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  SpectrumReport r;
  r.top_k = top_k;
  r.total_variance = cov.trace();
  ev.resize(std::min<std::size_t>(ev.size(), static_cast<std::size_t>(top_k)));
  r.eigenvalues = std::move(ev);
  return r;
}

nlohmann::json diagnostics_json(MiMode mode, const MineResult& r) {
  return {{"mode", to_string(mode)}, {"estimate_nats", r.estimate}, {"curve", r.curve}, {"proxy", "frozen_embedding_mean"}};
}

std::string spectrum_csv(const SpectrumReport& s) {
  std::ostringstream out;
  out.precision(17);
  out << "rank,eigenvalue\n";
  for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) out << i + 1 << ',' << s.eigenvalues[i] << '\n';
  return out.str();
}

}  // namespace repcl
