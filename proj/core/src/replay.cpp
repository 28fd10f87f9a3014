#include "repcl/replay.hpp"

#include "repcl/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>

namespace repcl {

KMeansResult kmeans(const Mat& points, int k, Rng& rng, int max_iter, double tol) {
  const Eigen::Index n = points.rows();
  if (n == 0) throw InputError("kmeans on an empty point set");
  if (k < 1 || k > n) throw InputError("kmeans needs 1 <= k <= n");

  KMeansResult res;
  res.centroids.resize(k, points.cols());

  // k-means++ seeding.
  Vec d2 = Vec::Constant(n, std::numeric_limits<double>::infinity());
  std::size_t first = uniform_index(rng, static_cast<std::size_t>(n));
  res.centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - res.centroids.row(c - 1)).squaredNorm());
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2(i);
        if (u < 0.0 && d2(i) > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
    }
    res.centroids.row(c) = points.row(pick);
  }

  res.assignment.assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - res.centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      res.assignment[static_cast<std::size_t>(i)] = best;
    }
    Mat sums = Mat::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = res.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      const RowVec next = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      shift = std::max(shift, (next - res.centroids.row(c)).norm());
      res.centroids.row(c) = next;
    }
    if (shift < tol) break;
  }
  return res;
}

std::vector<Instance> select_exemplars(std::span<const Instance> instances, const Mat& representations, int budget,
                                       Rng& rng) {
  const auto n = static_cast<Eigen::Index>(instances.size());
  if (n == 0) throw InputError("select_exemplars: no instances");
  if (representations.rows() != n) throw ShapeError("select_exemplars: one representation per instance required");
  if (budget < 1) throw ConfigError("memory budget must be positive");
  if (n <= budget) return {instances.begin(), instances.end()};

  const KMeansResult km = kmeans(representations, budget, rng);
  auto order_key = [&](Eigen::Index i) { return instances[static_cast<std::size_t>(i)].index >= 0 ? instances[static_cast<std::size_t>(i)].index : static_cast<int>(i); };
  std::vector<Instance> out;
  for (int c = 0; c < budget; ++c) {
    Eigen::Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (km.assignment[static_cast<std::size_t>(i)] != c) continue;
      const double d = (representations.row(i) - km.centroids.row(c)).squaredNorm();
      if (d < best_d || (d == best_d && best >= 0 && order_key(i) < order_key(best))) {
        best_d = d;
        best = i;
      }
    }
    if (best >= 0) out.push_back(instances[static_cast<std::size_t>(best)]);
  }
  return out;
}

MemoryBank::MemoryBank(int budget_per_class) : budget_(budget_per_class) {
  if (budget_per_class < 1) throw ConfigError("memory budget must be positive");
}

void MemoryBank::store(int label, std::vector<Instance> exemplars) {
  if (static_cast<int>(exemplars.size()) > budget_) throw InputError("exemplars exceed the per-class budget");
  for (const Instance& x : exemplars)
    if (x.label != label) throw InputError("exemplar label does not match its memory slot");
  store_[label] = std::move(exemplars);
}

std::vector<const Instance*> MemoryBank::all() const {
  std::vector<const Instance*> out;
  for (const auto& [_, xs] : store_)
    for (const Instance& x : xs) out.push_back(&x);
  return out;
}

std::size_t MemoryBank::size() const {
  std::size_t n = 0;
  for (const auto& [_, xs] : store_) n += xs.size();
  return n;
}

nlohmann::json MemoryBank::to_json() const {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [c, xs] : store_) {
    std::vector<int> idx;
    for (const Instance& x : xs) idx.push_back(x.index);
    classes[std::to_string(c)] = idx;
  }
  return {{"budget_per_class", budget_}, {"classes", classes}};
}

MemoryBank MemoryBank::from_json(const nlohmann::json& j, const Corpus& corpus) {
  MemoryBank bank(j.at("budget_per_class").get<int>());
  for (const auto& [key, idx] : j.at("classes").items()) {
    const int c = std::stoi(key);
    std::vector<Instance> xs;
    for (int i : idx.get<std::vector<int>>()) {
      if (i < 0 || i >= static_cast<int>(corpus.instances.size())) throw ValidationError("memory bank index out of range");
      xs.push_back(corpus.instances[static_cast<std::size_t>(i)]);
    }
    bank.store(c, std::move(xs));
  }
  return bank;
}

void AdversarialConfig::validate() const {
  if (steps < 1) throw ConfigError("adversarial steps K must be >= 1");
  if (!(step_size > 0.0)) throw ConfigError("adversarial step size must be positive");
  if (epsilon < 0.0) throw ConfigError("adversarial epsilon must be non-negative");
}

double frobenius_norm(std::span<const Mat> delta) {
  double s = 0.0;
  for (const Mat& d : delta) s += d.squaredNorm();
  return std::sqrt(s);
}

void project_to_ball(std::vector<Mat>& delta, double epsilon, NormScope scope) {
  if (scope == NormScope::Batch) {
    const double n = frobenius_norm(delta);
    if (n > epsilon && n > 0.0)
      for (Mat& d : delta) d *= epsilon / n;
  } else {
    for (Mat& d : delta) {
      const double n = d.norm();
      if (n > epsilon && n > 0.0) d *= epsilon / n;
    }
  }
}

Var batch_cross_entropy(Model& model, Tape& tape, std::span<const Instance* const> batch,
                        std::span<const int> targets, const PassOptions& opts) {
  std::vector<Var> zs;
  zs.reserve(batch.size());
  for (const Instance* x : batch) zs.push_back(model.encode(tape, *x, opts));
  return cross_entropy(model.classify(tape, vconcat(zs)), targets);
}

namespace {

std::vector<Mat> initial_delta(Model& model, std::span<const Instance* const> batch, const AdversarialConfig& cfg,
                               Rng& rng) {
  const int d = model.config().embed_dim;
  const int max_len = model.config().max_seq_len;
  std::vector<Mat> delta;
  std::size_t numel = 0;
  for (const Instance* x : batch) {
    const auto len = std::min<std::size_t>(x->tokens.size(), static_cast<std::size_t>(max_len));
    delta.push_back(Mat::Zero(static_cast<Eigen::Index>(len), d));
    numel += len * static_cast<std::size_t>(d);
  }
  if (cfg.init == DeltaInit::UniformScaled && numel > 0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double mag = cfg.epsilon / std::sqrt(static_cast<double>(numel));
    for (Mat& m : delta)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng) * mag;
    project_to_ball(delta, cfg.epsilon, cfg.norm);
  }
  return delta;
}

}  // namespace

FreeLBResult freelb_loss(Model& model, std::span<const Instance* const> batch, std::span<const int> targets,
                         const AdversarialConfig& cfg, Rng& rng, Rng* dropout_rng, bool record_deltas) {
  cfg.validate();
  if (batch.size() != targets.size()) throw ShapeError("freelb: one target per instance required");
  FreeLBResult res;
  std::vector<Mat> delta = initial_delta(model, batch, cfg, rng);
  res.delta_norms.push_back(frobenius_norm(delta));
  const double inv_k = 1.0 / static_cast<double>(cfg.steps);

  for (int t = 0; t < cfg.steps; ++t) {
    if (record_deltas) res.deltas.push_back(delta);
    Tape tape;
    std::vector<Var> leaves;
    std::vector<Var> zs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      leaves.push_back(tape.leaf(delta[i]));
      PassOptions opts{dropout_rng, &leaves.back()};
      zs.push_back(model.encode(tape, *batch[i], opts));
    }
    Var loss = cross_entropy(model.classify(tape, vconcat(zs)), targets);
    tape.backward(loss, inv_k);
    res.step_losses.push_back(loss.scalar());
    res.loss += loss.scalar() * inv_k;

    std::vector<Mat> g;
    for (const Var& l : leaves) g.push_back(l.grad());
    if (cfg.norm == NormScope::Batch) {
      const double gn = frobenius_norm(g);
      if (gn > 0.0)
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += cfg.step_size * g[i] / gn;
    } else {
      for (std::size_t i = 0; i < delta.size(); ++i) {
        const double gn = g[i].norm();
        if (gn > 0.0) delta[i] += cfg.step_size * g[i] / gn;
      }
    }
    project_to_ball(delta, cfg.epsilon, cfg.norm);
    res.delta_norms.push_back(frobenius_norm(delta));
  }
  return res;
}

double perturbed_loss(Model& model, std::span<const Instance* const> batch, std::span<const int> targets,
                      std::span<const Mat> delta) {
  Tape tape(false);
  std::vector<Var> zs;
  std::vector<Var> leaves;
  leaves.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    leaves.push_back(tape.constant(delta[i]));
    PassOptions opts{nullptr, &leaves.back()};
    zs.push_back(model.encode(tape, *batch[i], opts));
  }
  return cross_entropy(model.classify(tape, vconcat(zs)), targets).scalar();
}

ReplayLog replay_stage(Model& model, const MemoryBank& bank, const std::unordered_map<int, int>& class_to_row,
                       const ReplayOptions& opts, Rng& shuffle_rng, Rng& adv_rng, Rng* dropout_rng) {
  ReplayLog log;
  if (bank.empty()) {
    spdlog::warn("replay stage skipped: memory bank is empty");
    return log;
  }
  if (opts.adversarial) opts.adv.validate();
  const std::vector<const Instance*> items = bank.all();

  Adam adam(opts.adam);
  adam.add_group(model.encoder_params(), opts.lr_encoder);
  adam.add_group(model.classifier_params(), opts.lr_head);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = make_batches(items.size(), opts.batch_size, shuffle_rng);
    for (const auto& b : batches) {
      std::vector<const Instance*> xs;
      std::vector<int> ys;
      for (int i : b) {
        xs.push_back(items[static_cast<std::size_t>(i)]);
        ys.push_back(class_to_row.at(xs.back()->label));
      }
      log.visited += xs.size();
      adam.zero_grad();
      double loss = 0.0;
      {
        Tape tape;
        Var ce = batch_cross_entropy(model, tape, xs, ys, PassOptions{dropout_rng, nullptr});
        tape.backward(ce);
        loss += ce.scalar();
      }
      if (opts.adversarial) loss += freelb_loss(model, xs, ys, opts.adv, adv_rng, dropout_rng).loss;
      if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss in replay stage");
      adam.step();
      total += loss;
    }
    log.epoch_loss.push_back(total / static_cast<double>(batches.size()));
  }
  return log;
}

}  // namespace repcl
