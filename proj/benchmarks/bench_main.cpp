#include "repcl/contrastive.hpp"
#include "repcl/corpus.hpp"
#include "repcl/encoder.hpp"
#include "repcl/replay.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace repcl;

EncoderConfig bench_encoder(std::size_t vocab) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.hidden_dim = 64;
  c.max_seq_len = 32;
  c.proj_dim = 32;
  c.pooling = Pooling::SentenceMean;
  return c;
}

Mat unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  m.rowwise().normalize();
  return m;
}

void BM_EncodeBatch(benchmark::State& state) {
  const Corpus c = make_synthetic_corpus(4, 16, static_cast<int>(state.range(0)), 64, 1);
  Model m(bench_encoder(c.vocab.size()), 1);
  for (auto _ : state) benchmark::DoNotOptimize(m.representations(c.instances));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c.instances.size()));
}
BENCHMARK(BM_EncodeBatch)->Arg(8)->Arg(16)->Arg(32);

void BM_SupInfoNCEForwardBackward(benchmark::State& state) {
  Rng rng = make_rng(2, 0);
  const Mat a = unit_rows(16, 32, rng);
  const Mat c = unit_rows(state.range(0), 32, rng);
  std::vector<int> al(16), cl(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < al.size(); ++i) al[i] = static_cast<int>(i % 4);
  for (std::size_t i = 0; i < cl.size(); ++i) cl[i] = static_cast<int>(i % 4);
  for (auto _ : state) {
    Tape t;
    const Var x = t.leaf(a);
    t.backward(supinfonce_loss(x, al, t.constant(c), cl, 0.05));
    benchmark::DoNotOptimize(x.grad());
  }
}
BENCHMARK(BM_SupInfoNCEForwardBackward)->Arg(64)->Arg(512);

void BM_FreeLB(benchmark::State& state) {
  const Corpus c = make_synthetic_corpus(4, 8, 16, 64, 3);
  Model m(bench_encoder(c.vocab.size()), 3);
  Rng head = make_rng(3, 1);
  m.expand_classes(4, head);
  std::vector<const Instance*> batch;
  std::vector<int> y;
  for (const Instance& x : c.instances) {
    batch.push_back(&x);
    y.push_back(x.label);
  }
  AdversarialConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  Rng rng = make_rng(3, 2);
  for (auto _ : state) {
    m.zero_grad();
    benchmark::DoNotOptimize(freelb_loss(m, batch, y, cfg, rng).loss);
  }
}
BENCHMARK(BM_FreeLB)->Arg(1)->Arg(2);

void BM_KMeans(benchmark::State& state) {
  Rng data = make_rng(4, 0);
  const Mat pts = unit_rows(state.range(0), 64, data);
  for (auto _ : state) {
    Rng rng = make_rng(4, 1);
    benchmark::DoNotOptimize(kmeans(pts, 10, rng).assignment);
  }
}
BENCHMARK(BM_KMeans)->Arg(100)->Arg(400);

}  // namespace

BENCHMARK_MAIN();
