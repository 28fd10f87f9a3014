#include "gradcheck.hpp"

#include "repcl/diagnostics.hpp"
#include "repcl/errors.hpp"
#include "repcl/replay.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace repcl;
using repcl::testing::make_instance;

namespace {

std::pair<Mat, Mat> gaussian_pairs(int n, double rho, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6A);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat u(n, 1), v(n, 1);
  for (int i = 0; i < n; ++i) {
    const double a = g(rng), b = g(rng);
    u(i, 0) = a;
    v(i, 0) = rho * a + std::sqrt(1.0 - rho * rho) * b;
  }
  return {u, v};
}

}  // namespace

TEST(Mine, CorrelatedGaussianNearClosedForm) {
  const double truth = -0.5 * std::log(1.0 - 0.81);
  ASSERT_NEAR(truth, 0.8304, 1e-4);
  const auto [u, v] = gaussian_pairs(2000, 0.9, 1);
  Rng rng = make_rng(1, 1);
  const MineResult r = mine_estimate(u, v, MineConfig{}, rng);
  EXPECT_EQ(r.curve.size(), 100u);
  EXPECT_NEAR(r.estimate, truth, 0.15 * truth);
}

TEST(Mine, IndependentVariablesNearZero) {
  const auto [u, v] = gaussian_pairs(2000, 0.0, 2);
  Rng rng = make_rng(2, 1);
  const MineResult r = mine_estimate(u, v, MineConfig{}, rng);
  EXPECT_LE(r.estimate, 0.05);
  EXPECT_GE(r.estimate, -0.05);
}

TEST(Mine, DeterministicCopyExceedsTwoNats) {
  const auto [u, unused] = gaussian_pairs(2000, 0.0, 3);
  (void)unused;
  Rng rng = make_rng(3, 1);
  EXPECT_GE(mine_estimate(u, u, MineConfig{}, rng).estimate, 2.0);
}

TEST(Mine, InputErrors) {
  Rng rng = make_rng(4, 0);
  EXPECT_THROW(mine_estimate(Mat::Zero(1, 2), Mat::Zero(1, 2), MineConfig{}, rng), InputError);
  MineConfig bad;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Mine, StandardizeCentersConstantColumns) {
  Mat x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const Mat s = standardize_columns(x);
  EXPECT_NEAR(s.col(0).mean(), 0.0, 1e-15);
  EXPECT_NEAR(s.col(0).squaredNorm() / 3.0, 1.0, 1e-12);
  EXPECT_EQ(s.col(1), Vec::Zero(3));
}

TEST(TaskMi, CollapsedClassesApproachLogClassCount) {
  const int classes = 4;
  std::vector<Instance> xs;
  Mat reps(classes * 30, classes);
  reps.setZero();
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < 30; ++k) {
      reps(static_cast<Eigen::Index>(xs.size()), c) = 1.0;
      xs.push_back(make_instance({7}, c, static_cast<int>(xs.size())));
    }
  Rng rng = make_rng(5, 0);
  const auto [a, b] = mi_pairs(reps, xs, MiMode::ZZPlus, 512, rng);
  ASSERT_GE(a.rows(), 512);
  for (Eigen::Index i = 0; i < a.rows(); ++i) ASSERT_EQ(a.row(i), b.row(i));
  MineConfig cfg;
  cfg.epochs = 60;
  const double est = mine_estimate(a, b, cfg, rng).estimate;
  EXPECT_GE(est, 0.75 * std::log(classes));
  EXPECT_LE(est, std::log(classes) + 0.2);
}

TEST(TaskMi, ConstantRepresentationCarriesNoInformation) {
  const Corpus c = make_synthetic_corpus(4, 150, 8, 30, 6);
  Model m(repcl::testing::tiny_config(c.vocab.size()), 6);
  const Mat frozen = m.token_embeddings();
  Rng rng = make_rng(6, 0);
  const Mat reps = Mat::Constant(static_cast<Eigen::Index>(c.instances.size()), 16, 0.3);
  const auto [x, z] = mi_pairs(reps, c.instances, MiMode::XZ, 512, rng, &frozen);
  EXPECT_EQ(x.rows(), z.rows());
  EXPECT_LE(mine_estimate(x, z, MineConfig{}, rng).estimate, 0.05);
  EXPECT_THROW(mi_pairs(reps, c.instances, MiMode::XZ, 512, rng, nullptr), InputError);
}

TEST(TaskMi, PairShapesAndSkippedSingletons) {
  std::vector<Instance> xs = {make_instance({7}, 0, 0), make_instance({8}, 0, 1), make_instance({9}, 1, 2)};
  const Mat reps = Mat::Random(3, 4);
  Rng rng = make_rng(7, 0);
  const auto [zy, y] = mi_pairs(reps, xs, MiMode::ZY, 0, rng);
  EXPECT_EQ(y.cols(), 2);
  EXPECT_EQ(y.rowwise().sum(), Vec::Ones(3));
  const auto [a, b] = mi_pairs(reps, xs, MiMode::ZZPlus, 10, rng);
  for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NE(a.row(i), reps.row(2));
  EXPECT_EQ(embedding_mean_proxy(Mat::Identity(10, 10), make_instance({1, 3}, 0)),
            (RowVec(10) << 0, 0.5, 0, 0.5, 0, 0, 0, 0, 0, 0).finished());
  std::vector<Instance> lonely = {make_instance({7}, 0), make_instance({8}, 1)};
  EXPECT_THROW(mi_pairs(Mat::Zero(2, 2), lonely, MiMode::ZZPlus, 4, rng), InputError);
}

TEST(TaskMi, TrainingRaisesLabelInformation) {
  double before = 0.0, after = 0.0;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const Corpus c = make_synthetic_corpus(4, 40, 12, 30, 10 + seed);
    Model m(repcl::testing::tiny_config(c.vocab.size()), seed);
    Rng head = make_rng(seed, 1);
    m.expand_classes(4, head);
    MineConfig mc;
    mc.epochs = 60;
    TaskMiOptions opts{mc, 512};
    Rng r1 = make_rng(seed, 2);
    before += estimate_task_mi(m, c.instances, MiMode::ZY, opts, r1).estimate;

    MemoryBank bank(40);
    for (int k = 0; k < 4; ++k) {
      std::vector<Instance> cls;
      for (const Instance& x : c.instances)
        if (x.label == k) cls.push_back(x);
      bank.store(k, cls);
    }
    ReplayOptions ro;
    ro.epochs = 10;
    ro.lr_encoder = 1e-3;
    ro.adversarial = false;
    Rng s = make_rng(seed, 3), a = make_rng(seed, 4);
    replay_stage(m, bank, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}, ro, s, a);
    Rng r2 = make_rng(seed, 2);
    after += estimate_task_mi(m, c.instances, MiMode::ZY, opts, r2).estimate;
  }
  EXPECT_GT(after, before);
}

TEST(Spectrum, HandExamples) {
  Mat two(2, 2);
  two << 1, 0, -1, 0;
  const SpectrumReport r = eig_spectrum(two, 5);
  ASSERT_EQ(r.eigenvalues.size(), 2u);
  EXPECT_NEAR(r.eigenvalues[0], 1.0, 1e-15);
  EXPECT_NEAR(r.eigenvalues[1], 0.0, 1e-15);

  const SpectrumReport z = eig_spectrum(Mat::Constant(6, 3, 2.5), 3);
  for (double e : z.eigenvalues) EXPECT_EQ(e, 0.0);
  EXPECT_THROW(eig_spectrum(Mat::Zero(1, 3), 3), InputError);
}

TEST(Spectrum, TraceIdentityOrderingAndRotationInvariance) {
  Rng rng = make_rng(8, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat x(40, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) * (1 + i % 6);
  const SpectrumReport r = eig_spectrum(x, 6);
  double sum = 0.0;
  for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) {
    sum += r.eigenvalues[i];
    EXPECT_GE(r.eigenvalues[i], 0.0);
    if (i) EXPECT_LE(r.eigenvalues[i], r.eigenvalues[i - 1]);
  }
  EXPECT_NEAR(sum / r.total_variance, 1.0, 1e-8);
  EXPECT_NEAR(r.top_sum(6), sum, 1e-12);
  EXPECT_EQ(eig_spectrum(x, 2).eigenvalues.size(), 2u);

  Mat q_raw(6, 6);
  for (Eigen::Index i = 0; i < q_raw.size(); ++i) q_raw.data()[i] = g(rng);
  const Mat q = Eigen::HouseholderQR<Mat>(q_raw).householderQ();
  const SpectrumReport rot = eig_spectrum(x * q, 6);
  for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) EXPECT_NEAR(rot.eigenvalues[i], r.eigenvalues[i], 1e-8);
}

TEST(Diagnostics, Serialisation) {
  MineResult r;
  r.estimate = 0.5;
  r.curve = {0.1, 0.5};
  const auto j = diagnostics_json(MiMode::ZZPlus, r);
  EXPECT_EQ(j.at("mode"), "z_zplus");
  EXPECT_EQ(j.at("proxy"), "frozen_embedding_mean");
  EXPECT_EQ(mi_mode_from_string(to_string(MiMode::XZ)), MiMode::XZ);
  EXPECT_THROW(mi_mode_from_string("bogus"), ConfigError);
  SpectrumReport s;
  s.eigenvalues = {2.0, 0.5};
  EXPECT_EQ(spectrum_csv(s), "rank,eigenvalue\n1,2\n2,0.5\n");
}
