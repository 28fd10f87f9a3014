// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
//   acceptance [--only N[,M...]] [--known-failures N[,M...]]
//
// Known failures still print FAIL; the exit code is zero only when the failing
// set matches the declared one exactly, so a fix or a new regression both trip it.

#include "gradcheck.hpp"

#include "repcl/config.hpp"
#include "repcl/contrastive.hpp"
#include "repcl/diagnostics.hpp"
#include "repcl/generative.hpp"
#include "repcl/harness.hpp"
#include "repcl/metrics.hpp"
#include "repcl/replay.hpp"

#include <Eigen/Core>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace repcl;
using repcl::testing::check_params;
using repcl::testing::make_instance;
using repcl::testing::random_instances;
using repcl::testing::tiny_config;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "ok: " : "FAILED: ") + what);
  }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient checks

Outcome gradient_checks() {
  Outcome o;
  const auto t0 = Clock::now();
  constexpr double kTol = 1e-4;

  Model m(tiny_config(), 101);
  Rng head = make_rng(101, 1);
  m.expand_classes(3, head);
  const auto batch_owned = random_instances(3, 2, 6, 30, 101);
  std::vector<const Instance*> batch;
  std::vector<int> targets, labels;
  for (const Instance& x : batch_owned) {
    batch.push_back(&x);
    targets.push_back(x.label);
    labels.push_back(x.label);
  }

  {
    auto value = [&] {
      Tape t(false);
      return batch_cross_entropy(m, t, batch, targets).scalar();
    };
    const auto r = check_params(
        m.all_params(),
        [&] {
          Tape t;
          t.backward(batch_cross_entropy(m, t, batch, targets));
        },
        value);
    o.check(r.max_rel_error <= kTol, fmt::format("CE max rel err {:.2e} over {} entries", r.max_rel_error, r.checked));
  }
  {
    Rng rng = make_rng(102, 0);
    std::normal_distribution<double> g(0.0, 1.0);
    Mat cand(8, m.config().proj_dim);
    for (Eigen::Index i = 0; i < cand.size(); ++i) cand.data()[i] = g(rng);
    cand.rowwise().normalize();
    const std::vector<int> cand_labels = {0, 1, 2, 0, 1, 2, 0, 1};
    auto loss = [&](Tape& t) {
      std::vector<Var> zs;
      for (const Instance* x : batch) zs.push_back(m.encode(t, *x));
      return supinfonce_loss(m.project(t, vconcat(zs)), labels, t.constant(cand), cand_labels, 0.1);
    };
    const auto r = check_params(
        m.all_params(),
        [&] {
          Tape t;
          t.backward(loss(t));
        },
        [&] {
          Tape t(false);
          return loss(t).scalar();
        });
    o.check(r.max_rel_error <= kTol,
            fmt::format("SupInfoNCE max rel err {:.2e} over {} entries (worst {})", r.max_rel_error, r.checked, r.worst));
  }
  {
    Rng rng = make_rng(103, 0);
    const MaskedSample s = mask_tokens(*batch[1], 0.5, rng);
    auto loss = [&](Tape& t) { return xmlm_loss(m, t, m.encode(t, *batch[0]), s); };
    const auto r = check_params(
        m.all_params(),
        [&] {
          Tape t;
          t.backward(loss(t));
        },
        [&] {
          Tape t(false);
          return loss(t).scalar();
        });
    o.check(r.max_rel_error <= kTol, fmt::format("XMLM max rel err {:.2e} over {} entries", r.max_rel_error, r.checked));
  }
  {
    const AdversarialConfig cfg;
    Rng rng = make_rng(104, 0);
    const FreeLBResult rec = freelb_loss(m, batch, targets, cfg, rng, nullptr, true);
    const auto r = check_params(
        m.all_params(),
        [&] {
          Rng again = make_rng(104, 0);
          freelb_loss(m, batch, targets, cfg, again);
        },
        [&] {
          double s = 0.0;
          for (const auto& d : rec.deltas) s += perturbed_loss(m, batch, targets, d);
          return s / static_cast<double>(rec.deltas.size());
        });
    o.check(r.max_rel_error <= kTol,
            fmt::format("FreeLB max rel err {:.2e} over {} entries", r.max_rel_error, r.checked));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 60.0, fmt::format("runtime {:.1f}s < 60s", secs));
  return o;
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalences

double infonce_oracle(const Mat& a, const Mat& c, double tau) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double denom = 0.0;
    for (Eigen::Index j = 0; j < c.rows(); ++j) denom += std::exp(a.row(i).dot(c.row(j)) / tau);
    total += std::log(denom) - a.row(i).dot(c.row(i)) / tau;
  }
  return total / static_cast<double>(a.rows());
}

double supcon_oracle(const Mat& a, std::span<const int> al, const Mat& c, std::span<const int> cl, double tau) {
  double total = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double denom = 0.0, pos = 0.0;
    int npos = 0;
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double s = a.row(i).dot(c.row(j)) / tau;
      denom += std::exp(s);
      if (cl[static_cast<std::size_t>(j)] == al[static_cast<std::size_t>(i)]) {
        pos += s;
        ++npos;
      }
    }
    if (npos == 0) continue;
    total += std::log(denom) - pos / npos;
    ++count;
  }
  return total / count;
}

double brute_force_fr(const std::vector<std::vector<double>>& a, int k) {
  double total = 0.0;
  for (int i = 0; i < k - 1; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (int l = i; l < k - 1; ++l) best = std::max(best, a[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)]);
    total += best - a[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i)];
  }
  return total / (k - 1);
}

Mat unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  m.rowwise().normalize();
  return m;
}

Outcome oracle_equivalences() {
  Outcome o;
  Rng rng = make_rng(201, 0);

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat a = unit_rows(8, 16, rng);
    const Mat c = unit_rows(8, 16, rng);
    std::vector<int> ids(8);
    std::iota(ids.begin(), ids.end(), 0);
    worst = std::max(worst, std::abs(supinfonce_value(a, ids, c, ids, 0.1) - infonce_oracle(a, c, 0.1)));
  }
  o.check(worst <= 1e-9, fmt::format("(a) SupInfoNCE vs InfoNCE max |diff| {:.2e} <= 1e-9", worst));

  {
    const Mat a = unit_rows(1, 16, rng);
    const Mat c = unit_rows(6, 16, rng);
    const std::vector<int> al = {0}, cl = {0, 0, 0, 1, 2, 3};
    const double ours = supinfonce_value(a, al, c, cl, 0.1);
    const double supcon = supcon_oracle(a, al, c, cl, 0.1);
    o.check(std::abs(ours - supcon) > 1e-6, fmt::format("(b) 3 positives: SupInfoNCE {:.6f} != SupCon {:.6f}", ours, supcon));
  }

  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<double>> raw(6, std::vector<double>(6, 0.0));
    AccuracyMatrix m(6);
    for (int j = 1; j <= 6; ++j)
      for (int i = 1; i <= j; ++i) {
        const double v = uniform01(rng);
        raw[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(i - 1)] = v;
        m.set(j, i, v);
      }
    for (int k = 2; k <= 6; ++k) mismatches += *forgetting_rate(m, k) != brute_force_fr(raw, k);
  }
  o.check(mismatches == 0, fmt::format("(c) forgetting_rate vs brute force on 1000 random 6x6: {} mismatches", mismatches));

  {
    Mat pts(4, 2);
    pts << 0, 0, 0, 1, 10, 0, 10, 1;
    std::vector<Instance> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(make_instance({7}, 0, i));
    // Brute-force 2-means over all bipartitions.
    double best = std::numeric_limits<double>::infinity();
    std::set<int> expect;
    for (int mask = 1; mask < 15; ++mask) {
      double sse = 0.0;
      std::set<int> pick;
      for (int side = 0; side < 2; ++side) {
        std::vector<int> mem;
        for (int i = 0; i < 4; ++i)
          if (((mask >> i) & 1) == side) mem.push_back(i);
        RowVec c = RowVec::Zero(2);
        for (int i : mem) c += pts.row(i);
        c /= static_cast<double>(mem.size());
        int arg = -1;
        double dmin = std::numeric_limits<double>::infinity();
        for (int i : mem) {
          const double d = (pts.row(i) - c).squaredNorm();
          sse += d;
          if (d < dmin) {
            dmin = d;
            arg = i;
          }
        }
        pick.insert(arg);
      }
      if (sse < best - 1e-12) {
        best = sse;
        expect = pick;
      }
    }
    bool all = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng r = make_rng(seed, 7);
      std::set<int> got;
      for (const Instance& x : select_exemplars(xs, pts, 2, r)) got.insert(x.index);
      all = all && got == expect;
    }
    o.check(all, "(d) select_exemplars on the 4-point case matches brute-force 2-means (20 seeds)");
  }
  return o;
}

// ---------------------------------------------------------------------------
// 3. FreeLB contract

Outcome freelb_contract() {
  Outcome o;
  Model m(tiny_config(), 301);
  Rng head = make_rng(301, 1);
  m.expand_classes(3, head);
  const AdversarialConfig cfg;  // K=2, alpha=0.1, eps=0.2
  double max_norm = 0.0;
  int violations = 0;
  for (int run = 0; run < 1000; ++run) {
    Rng rng = make_rng(static_cast<std::uint64_t>(run), 302);
    const int n = 1 + static_cast<int>(uniform_index(rng, 4));
    auto owned = random_instances(3, 2, 3 + static_cast<int>(uniform_index(rng, 8)), 30, static_cast<std::uint64_t>(run));
    owned.resize(static_cast<std::size_t>(n));
    std::vector<const Instance*> b;
    std::vector<int> y;
    for (const Instance& x : owned) {
      b.push_back(&x);
      y.push_back(x.label);
    }
    AdversarialConfig c = cfg;
    c.init = run % 2 ? DeltaInit::UniformScaled : DeltaInit::Zero;
    m.zero_grad();
    const FreeLBResult r = freelb_loss(m, b, y, c, rng);
    for (double nrm : r.delta_norms) {
      max_norm = std::max(max_norm, nrm);
      violations += nrm > c.epsilon * (1.0 + 1e-12);
    }
  }
  o.check(violations == 0, fmt::format("||delta_t|| <= eps over 1000 runs (max {:.6f}, {} violations)", max_norm, violations));

  const auto owned = random_instances(3, 2, 6, 30, 303);
  std::vector<const Instance*> b;
  std::vector<int> y;
  for (const Instance& x : owned) {
    b.push_back(&x);
    y.push_back(x.label);
  }
  Model clean = m;
  AdversarialConfig one = cfg;
  one.steps = 1;
  Rng rng = make_rng(303, 0);
  m.zero_grad();
  const double adv = freelb_loss(m, b, y, one, rng).loss;
  clean.zero_grad();
  Tape t;
  const Var ce = batch_cross_entropy(clean, t, b, y);
  t.backward(ce);
  double grad_diff = 0.0;
  const auto pa = m.all_params();
  const auto pb = clean.all_params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i]->grad.size()) grad_diff = std::max(grad_diff, (pa[i]->grad - pb[i]->grad).cwiseAbs().maxCoeff());
  o.check(std::abs(adv - ce.scalar()) <= 1e-12 && grad_diff <= 1e-12,
          fmt::format("K=1, delta=0: |loss diff| {:.1e}, max |grad diff| {:.1e} (<= 1e-12)", std::abs(adv - ce.scalar()),
                      grad_diff));
  return o;
}

// ---------------------------------------------------------------------------
// 4. Queue and EMA contracts

Outcome queue_and_ema() {
  Outcome o;
  Rng rng = make_rng(401, 0);
  int failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t cap = 1 + uniform_index(rng, 32);
    FeatureQueue q(cap, 2);
    std::deque<int> ref;
    int next = 0;
    for (int step = 0; step < 40; ++step) {
      const int n = static_cast<int>(uniform_index(rng, 2 * cap + 3));
      Mat f = Mat::Zero(n, 2);
      std::vector<int> l(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        f(i, 0) = next;
        l[static_cast<std::size_t>(i)] = next;
        ref.push_back(next++);
        if (ref.size() > cap) ref.pop_front();
      }
      q.enqueue(f, l);
      const auto got = q.labels();
      bool ok = q.size() <= cap && q.total_enqueued() - q.total_evicted() == q.size() &&
                got == std::vector<int>(ref.begin(), ref.end());
      const Mat feats = q.features();
      for (std::size_t i = 0; ok && i < got.size(); ++i) ok = feats(static_cast<Eigen::Index>(i), 0) == got[i];
      failures += !ok;
    }
  }
  o.check(failures == 0, fmt::format("FIFO capacity invariant over 500 randomized sequences ({} failures)", failures));

  std::normal_distribution<double> g(0.0, 1.0);
  Param theta("p", Mat(8, 8)), prime("p", Mat(8, 8));
  for (Eigen::Index i = 0; i < 64; ++i) {
    theta.value.data()[i] = g(rng);
    prime.value.data()[i] = g(rng);
  }
  std::vector<Param*> a = {&theta}, b = {&prime};
  const double eta = 0.99;
  const double d0 = (prime.value - theta.value).norm();
  double worst = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    ema_update(a, b, eta);
    worst = std::max(worst, std::abs((prime.value - theta.value).norm() - std::pow(eta, t) * d0));
  }
  o.check(worst <= 1e-10, fmt::format("EMA ||theta'_t - theta|| = eta^t ||theta'_0 - theta||, max err {:.1e}", worst));
  return o;
}

// ---------------------------------------------------------------------------
// 5. MINE validation

std::pair<Mat, Mat> gaussian_pairs(int n, double rho, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6A);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat u(n, 1), v(n, 1);
  for (int i = 0; i < n; ++i) {
    const double x = g(rng), e = g(rng);
    u(i, 0) = x;
    v(i, 0) = rho * x + std::sqrt(1.0 - rho * rho) * e;
  }
  return {u, v};
}

Outcome mine_validation() {
  Outcome o;
  const double truth = -0.5 * std::log(1.0 - 0.81);
  {
    const auto t0 = Clock::now();
    const auto [u, v] = gaussian_pairs(2000, 0.9, 501);
    Rng rng = make_rng(501, 1);
    const double est = mine_estimate(u, v, MineConfig{}, rng).estimate;
    const double secs = seconds_since(t0);
    o.check(std::abs(est - truth) <= 0.15 * truth,
            fmt::format("rho=0.9 estimate {:.4f} within 15% of {:.4f}", est, truth));
    o.check(secs < 120.0, fmt::format("rho=0.9 runtime {:.1f}s < 120s", secs));
  }
  {
    const auto t0 = Clock::now();
    const auto [u, v] = gaussian_pairs(2000, 0.0, 502);
    Rng rng = make_rng(502, 1);
    const double est = mine_estimate(u, v, MineConfig{}, rng).estimate;
    const double secs = seconds_since(t0);
    o.check(est <= 0.05, fmt::format("independent estimate {:.4f} <= 0.05", est));
    o.check(secs < 120.0, fmt::format("independent runtime {:.1f}s < 120s", secs));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 6, 7, 9. Toy benchmark runs (shared)

struct ToyRun {
  double final_acc = 0.0;
  std::optional<double> fr;
  double top20 = 0.0;
  double mi = 0.0;
};

class ToyBench {
 public:
  ToyBench() {
    cfg_ = load_config(std::string(REPCL_CONFIG_DIR) + "/default.cfg");
    cfg_.diagnostics.task1 = false;
    corpus_ = load_dataset(cfg_);
  }

  const ExperimentConfig& config() const { return cfg_; }

  const ToyRun& get(const std::string& variant, int budget, std::uint64_t seed, bool diagnostics) {
    const auto key = std::make_tuple(variant, budget, seed);
    auto it = cache_.find(key);
    if (it != cache_.end() && (!diagnostics || it->second.second)) return it->second.first;
    ExperimentConfig c = cfg_;
    c.train.memory_budget = budget;
    const auto t0 = Clock::now();
    RunOutcome run = run_experiment(c, corpus_, variant, seed);
    ToyRun r;
    r.final_acc = run.report.at("final_acc").get<double>();
    if (!run.report.at("fr").is_null()) r.fr = run.report.at("fr").get<double>();
    if (diagnostics && run.task1_model) {
      Model& m = *run.task1_model;
      const Task1Diagnostics d = task1_diagnostics(m, run.stream, c.diagnostics, seed, true);
      r.top20 = d.spectrum.top_sum(20);
      r.mi = d.mi_zzplus->estimate;
    }
    spent_ += seconds_since(t0);
    spdlog::info("toy {} B={} seed {}: acc {:.3f} fr {} top20 {:.4f} mi {:.4f} ({:.0f}s total)", variant, budget, seed,
                 r.final_acc, r.fr ? fmt::format("{:.3f}", *r.fr) : "null", r.top20, r.mi, spent_);
    cache_[key] = {r, diagnostics};
    return cache_[key].first;
  }

  std::vector<std::uint64_t> seeds() const { return run_seeds(cfg_); }
  double seconds() const { return spent_; }

 private:
  ExperimentConfig cfg_;
  Corpus corpus_;
  std::map<std::tuple<std::string, int, std::uint64_t>, std::pair<ToyRun, bool>> cache_;
  double spent_ = 0.0;
};

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += fmt::format("{}{:.3f}", s.empty() ? "" : " ", x);
  return s;
}

Outcome forgetting_reproduction(ToyBench& bench) {
  Outcome o;
  const int b = bench.config().train.memory_budget;
  std::vector<double> ce_fr, ce_acc, bb_acc, full_acc;
  for (std::uint64_t s : bench.seeds()) {
    const ToyRun& ce = bench.get("ce_only", b, s, false);
    ce_fr.push_back(ce.fr.value_or(std::numeric_limits<double>::quiet_NaN()));
    ce_acc.push_back(ce.final_acc);
    bb_acc.push_back(bench.get("backbone", b, s, true).final_acc);
    full_acc.push_back(bench.get("full", b, s, true).final_acc);
  }
  o.check(mean_of(ce_fr) >= 0.30, fmt::format("(a) CE-only FR mean {:.3f} >= 0.30 [{}]", mean_of(ce_fr), fmt_list(ce_fr)));
  o.check(mean_of(bb_acc) - mean_of(ce_acc) >= 0.10,
          fmt::format("(b) backbone acc {:.3f} - CE-only acc {:.3f} = {:+.3f} >= 0.10", mean_of(bb_acc), mean_of(ce_acc),
                      mean_of(bb_acc) - mean_of(ce_acc)));
  std::vector<double> d;
  for (std::size_t i = 0; i < full_acc.size(); ++i) d.push_back(full_acc[i] - bb_acc[i]);
  o.check(mean_of(d) >= 0.0, fmt::format("(c) full acc {:.3f} vs backbone {:.3f}, paired mean delta {:+.3f} >= 0 [{}]",
                                         mean_of(full_acc), mean_of(bb_acc), mean_of(d), fmt_list(d)));
  return o;
}

Outcome representation_diagnostics(ToyBench& bench) {
  Outcome o;
  const int b = bench.config().train.memory_budget;
  std::vector<double> dmi, deig, mi_full, mi_bb, eig_full, eig_bb;
  for (std::uint64_t s : bench.seeds()) {
    const ToyRun& f = bench.get("full", b, s, true);
    const ToyRun& k = bench.get("backbone", b, s, true);
    mi_full.push_back(f.mi);
    mi_bb.push_back(k.mi);
    eig_full.push_back(f.top20);
    eig_bb.push_back(k.top20);
    dmi.push_back(f.mi - k.mi);
    deig.push_back(f.top20 - k.top20);
  }
  o.check(mean_of(dmi) >= 0.0, fmt::format("task-1 I(Z;Z+) full {:.4f} vs backbone {:.4f}, paired mean delta {:+.4f}",
                                           mean_of(mi_full), mean_of(mi_bb), mean_of(dmi)));
  o.check(mean_of(deig) >= 0.0, fmt::format("task-1 top-20 eigenvalue sum full {:.4f} vs backbone {:.4f}, paired mean delta {:+.4f}",
                                            mean_of(eig_full), mean_of(eig_bb), mean_of(deig)));
  return o;
}

Outcome memory_sensitivity(ToyBench& bench) {
  Outcome o;
  std::vector<double> full_means;
  for (int b : {2, 5, 10}) {
    std::vector<double> f, k;
    for (std::uint64_t s : bench.seeds()) {
      f.push_back(bench.get("full", b, s, b == bench.config().train.memory_budget).final_acc);
      k.push_back(bench.get("backbone", b, s, b == bench.config().train.memory_budget).final_acc);
    }
    full_means.push_back(mean_of(f));
    o.check(mean_of(f) > mean_of(k), fmt::format("B={}: full {:.3f} > backbone {:.3f}", b, mean_of(f), mean_of(k)));
  }
  o.check(full_means[0] <= full_means[1] && full_means[1] <= full_means[2],
          fmt::format("full acc non-decreasing in B: {}", fmt_list(full_means)));
  return o;
}

// ---------------------------------------------------------------------------
// 8. Determinism

Outcome determinism(ToyBench& bench) {
  Outcome o;
  ExperimentConfig c = bench.config();
  const Corpus corpus = load_dataset(c);
  const std::string a = run_experiment(c, corpus, "full", 8).report.dump(2);
  const std::string b = run_experiment(c, corpus, "full", 8).report.dump(2);
  o.check(a == b, fmt::format("two seed-matched runs give byte-identical reports ({} bytes)", a.size()));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);
  spdlog::set_pattern("[%l] %v");
  auto id_list = [](const char* text) {
    std::set<int> ids;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) ids.insert(std::stoi(tok));
    return ids;
  };
  std::set<int> only, known;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") only = id_list(argv[i + 1]);
    if (std::string(argv[i]) == "--known-failures") known = id_list(argv[i + 1]);
  }

  ToyBench bench;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradient_checks},
      {2, oracle_equivalences},
      {3, freelb_contract},
      {4, queue_and_ema},
      {5, mine_validation},
      {6, [&] { return forgetting_reproduction(bench); }},
      {7, [&] { return representation_diagnostics(bench); }},
      {8, [&] { return determinism(bench); }},
      {9, [&] { return memory_sensitivity(bench); }},
  };
  const char* names[] = {"",
                         "loss/gradient correctness",
                         "oracle equivalences",
                         "FreeLB contract",
                         "queue/EMA contracts",
                         "MINE validation",
                         "catastrophic-forgetting reproduction",
                         "representation diagnostics direction",
                         "determinism",
                         "memory-size sensitivity"};

  std::set<int> failed_ids;
  std::vector<std::string> summary;
  const auto t0 = Clock::now();
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    if (!o.pass) failed_ids.insert(id);
    for (const auto& n : o.notes) std::cout << "    " << n << '\n';
    summary.push_back(fmt::format("criterion {}: {} ({})", id, o.pass ? "PASS" : "FAIL", names[id]));
    std::cout << summary.back() << std::endl;
  }
  if (bench.seconds() > 0.0) {
    const bool fast = bench.seconds() < 1800.0;
    std::cout << fmt::format("toy benchmark CPU time {:.0f}s ({} the 30 min budget)", bench.seconds(),
                             fast ? "within" : "OVER")
              << '\n';
    if (!fast) failed_ids.insert(6);  // the runtime budget belongs to the forgetting benchmark
  }
  std::cout << "\n";
  for (const auto& s : summary) std::cout << s << '\n';
  std::set<int> expected;
  for (int id : known)
    if (only.empty() || only.count(id)) expected.insert(id);
  std::cout << fmt::format("{} criteria failed; total {:.0f}s\n", failed_ids.size(), seconds_since(t0));
  if (!expected.empty())
    std::cout << fmt::format("declared known failures: {}; observed failures: {}\n", fmt::join(expected, ","),
                             fmt::join(failed_ids, ","));
  return failed_ids == expected ? 0 : 1;
}
