#include "repcl/config.hpp"
#include "repcl/errors.hpp"
#include "repcl/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace repcl;
namespace fs = std::filesystem;

namespace {

nlohmann::json fake_report(double final_acc, std::uint64_t seed, const std::string& hash = "abc",
                           nlohmann::json fr = 0.1) {
  return {{"config_hash", hash},
          {"variant", "full"},
          {"seed", seed},
          {"acc_per_stage", {1.0, final_acc}},
          {"final_acc", final_acc},
          {"fr", fr}};
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig c = parse_config(
      "preset = toy\n"
      "synthetic.num_classes = 4\n"
      "synthetic.per_class = 12\n"
      "synthetic.seq_len = 10\n"
      "synthetic.vocab_size = 30\n"
      "num_tasks = 2\n"
      "seeds = 2\n"
      "encoder.embed_dim = 16\n"
      "encoder.hidden_dim = 32\n"
      "encoder.proj_dim = 8\n"
      "epochs_initial = 1\n"
      "epochs_replay = 1\n"
      "memory_budget = 3\n"
      "diag.mine_epochs = 5\n"
      "diag.min_pairs = 32\n");
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("repcl_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, PresetsCarryPublishedHyperparameters) {
  struct Row {
    const char* name;
    double l2;
    int q;
    double tau, p;
    int cpt;
    Pooling pooling;
  };
  const Row rows[] = {{"fewrel", 0.2, 512, 0.05, 0.5, 8, Pooling::SpanConcat},
                      {"tacred", 0.05, 1024, 0.1, 0.2, 4, Pooling::SpanConcat},
                      {"maven", 0.05, 512, 0.05, 0.1, 12, Pooling::SpanMean},
                      {"hwu64", 0.1, 512, 0.05, 0.4, 5, Pooling::SentenceMean}};
  for (const Row& r : rows) {
    ExperimentConfig c;
    apply_preset(c, r.name);
    EXPECT_EQ(c.train.lambda_con, 0.05) << r.name;
    EXPECT_EQ(c.train.lambda_xmlm, r.l2) << r.name;
    EXPECT_EQ(c.train.queue_size, r.q) << r.name;
    EXPECT_EQ(c.train.temperature, r.tau) << r.name;
    EXPECT_EQ(c.train.momentum, 0.99) << r.name;
    EXPECT_EQ(c.train.mask_prob, r.p) << r.name;
    EXPECT_EQ(c.train.adv.steps, 2);
    EXPECT_EQ(c.train.adv.step_size, 0.1);
    EXPECT_EQ(c.train.adv.epsilon, 0.2);
    EXPECT_EQ(c.train.memory_budget, 10);
    EXPECT_EQ(c.num_tasks, 10);
    EXPECT_EQ(c.classes_per_task, r.cpt) << r.name;
    EXPECT_EQ(c.encoder.pooling, r.pooling) << r.name;
  }
  ExperimentConfig c;
  EXPECT_THROW(apply_preset(c, "imagenet"), ConfigError);
}

TEST(Config, ParsingRules) {
  const ExperimentConfig c = parse_config("# comment\nlambda2 = 0.3  # trailing\n\npreset = fewrel\nsynthetic.num_classes = 80\nsynthetic.vocab_size = 100\n");
  EXPECT_EQ(c.preset, "fewrel");
  EXPECT_EQ(c.train.lambda_xmlm, 0.3);  // preset applied first, explicit key wins
  EXPECT_THROW(parse_config("bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda1 = 0.1\nlambda1 = 0.2\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda1 = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda1 0.1\n"), ConfigError);
  EXPECT_THROW(parse_config("temperature = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("no_con = maybe\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST(Config, CanonicalTextRoundTripsAndHashes) {
  const ExperimentConfig a = parse_config("preset = toy\nseeds = 3\n");
  const ExperimentConfig b = parse_config(a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  ExperimentConfig c = a;
  c.train.no_con = true;
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  for (const SchemaField& f : config_schema()) EXPECT_NE(schema_text().find(f.key), std::string::npos);
}

TEST(Config, Variants) {
  EXPECT_EQ(ablation_variants().size(), 7u);
  TrainConfig t;
  apply_variant(t, "ce_only");
  EXPECT_TRUE(t.no_con && t.no_xmlm && t.no_adv && t.no_replay);
  TrainConfig m;
  apply_variant(m, "infomax");
  EXPECT_TRUE(m.use_infomax());
  EXPECT_FALSE(m.use_con());
  EXPECT_FALSE(m.use_xmlm());
  EXPECT_THROW(apply_variant(t, "nope"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"default.cfg", "fewrel.cfg", "tacred.cfg", "maven.cfg", "hwu64.cfg"}) {
    const fs::path p = fs::path(REPCL_CONFIG_DIR) / name;
    EXPECT_NO_THROW(load_config(p)) << name;
  }
}

TEST(Aggregate, SingleReportHasZeroSpread) {
  const auto a = aggregate_reports({fake_report(0.7, 1)});
  EXPECT_EQ(a.at("final_acc_mean"), 0.7);
  EXPECT_EQ(a.at("final_acc_stdev"), 0.0);
  EXPECT_EQ(a.at("acc_per_stage_mean"), nlohmann::json({1.0, 0.7}));
}

TEST(Aggregate, PopulationStdev) {
  const auto a = aggregate_reports({fake_report(0.8, 1), fake_report(0.9, 2)});
  EXPECT_NEAR(a.at("final_acc_mean").get<double>(), 0.85, 1e-12);
  EXPECT_NEAR(a.at("final_acc_stdev").get<double>(), 0.05, 1e-12);
  EXPECT_NEAR(a.at("fr_mean").get<double>(), 0.1, 1e-15);
}

TEST(Aggregate, RefusesMixedHashesAndKeepsNullForgetting) {
  EXPECT_THROW(aggregate_reports({fake_report(0.8, 1, "a"), fake_report(0.9, 2, "b")}), ConfigError);
  EXPECT_TRUE(aggregate_reports({fake_report(0.8, 1, "a", nullptr)}).at("fr_mean").is_null());
}

TEST(Aggregate, PairedDeltasMatchOnSeed) {
  const std::vector<nlohmann::json> full = {fake_report(0.9, 1), fake_report(0.8, 2), fake_report(0.5, 3)};
  const std::vector<nlohmann::json> ablated = {fake_report(0.6, 2), fake_report(0.7, 1)};
  const auto d = paired_deltas(full, ablated, "final_acc");
  EXPECT_EQ(d.at("pairs"), 2);
  EXPECT_NEAR(d.at("per_seed").at("1").get<double>(), 0.2, 1e-12);
  EXPECT_NEAR(d.at("per_seed").at("2").get<double>(), 0.2, 1e-12);
  EXPECT_NEAR(d.at("mean").get<double>(), 0.2, 1e-12);
}

TEST(Harness, ExperimentWritesOutputsAndPlots) {
  const ExperimentConfig cfg = tiny_experiment();
  const Corpus corpus = load_dataset(cfg);
  EXPECT_EQ(run_seeds(cfg), (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(encoder_for(cfg, corpus).vocab_size, corpus.vocab.size());
  const RunOutcome run = run_experiment(cfg, corpus, "full", 1);
  const auto& r = run.report;
  for (const char* key : {"accuracy_matrix", "acc_per_stage", "fr", "config", "seed", "config_hash", "variant"})
    EXPECT_TRUE(r.contains(key)) << key;
  EXPECT_EQ(r.at("accuracy_matrix").size(), 2u);

  const fs::path dir = scratch("run");
  write_run_outputs(run, dir, 1);
  for (const char* f : {"report_seed1.json", "accuracy_seed1.csv", "bank_seed1.json", "stream_seed1.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(read_json(dir / "report_seed1.json"), r);

  const RunOutcome other = run_experiment(cfg, corpus, "backbone", 1);
  EXPECT_NE(other.report.at("config_hash"), r.at("config_hash"));
  EXPECT_EQ(other.report.at("stream"), r.at("stream"));

  const auto plots = render_plots(dir, dir / "plots");
  EXPECT_FALSE(plots.empty());
  for (const auto& p : plots) {
    std::ifstream in(p);
    std::string head;
    std::getline(in, head);
    EXPECT_NE(head.find("<svg"), std::string::npos) << p;
  }
  fs::remove_all(dir);
}

TEST(Harness, SeedMatchedExperimentsAreByteIdentical) {
  const ExperimentConfig cfg = tiny_experiment();
  const Corpus corpus = load_dataset(cfg);
  EXPECT_EQ(run_experiment(cfg, corpus, "full", 2).report.dump(2),
            run_experiment(cfg, corpus, "full", 2).report.dump(2));
}

TEST(Harness, TaskOneDiagnostics) {
  ExperimentConfig cfg = tiny_experiment();
  const Corpus corpus = load_dataset(cfg);
  RunOutcome run = run_experiment(cfg, corpus, "full", 1);
  Model m = run.state.model;
  const Task1Diagnostics d = task1_diagnostics(m, run.stream, cfg.diagnostics, 1, true);
  EXPECT_LE(d.spectrum.eigenvalues.size(), static_cast<std::size_t>(cfg.diagnostics.top_k));
  ASSERT_TRUE(d.mi_zzplus.has_value());
  EXPECT_EQ(d.mi_zzplus->curve.size(), 5u);
  EXPECT_TRUE(d.to_json().contains("top_sum"));
  EXPECT_TRUE(d.to_json().contains("mi_z_zplus"));
}

TEST(Plots, SvgCharts) {
  const std::string line = svg_line_chart("acc <&>", "stage", "acc", {{"a", {1, 2, 3}, {0.9, 0.8, 0.7}}});
  EXPECT_EQ(line.rfind("<svg", 0), 0u);
  EXPECT_NE(line.find("acc &lt;&amp;&gt;"), std::string::npos);
  EXPECT_NE(line.find("</svg>"), std::string::npos);
  const std::string bars = svg_bar_chart("fr", "fr", {"x", "y"}, {0.1, -0.05});
  EXPECT_NE(bars.find("<rect"), std::string::npos);
}

TEST(Stats, MeanAndPopulationStdev) {
  const std::vector<double> v = {2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_EQ(mean(v), 5.0);
  EXPECT_EQ(stdev(v), 2.0);
}
