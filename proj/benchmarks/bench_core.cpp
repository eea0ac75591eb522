#include <benchmark/benchmark.h>

#include <random>

#include "dcr/clustering.hpp"
#include "dcr/training.hpp"

namespace {

using namespace dcr;

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(Shape{r, c});
  for (double& x : t.data()) x = n(rng);
  return t;
}

static void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    Graph g;
    Var x = g.input(a, true), y = g.input(b, true);
    Var out = sum(matmul(x, y));
    g.backward(out);
    benchmark::DoNotOptimize(g.grad(x).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(128)->Arg(256);

static void BM_DcrLossSimilarities(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Tensor sims = random_matrix(16, k, 3);
  for (auto _ : state) {
    Graph g;
    Var s = g.input(sims, true);
    g.backward(dcr_loss_from_similarities(s, kDefaultTau));
    benchmark::DoNotOptimize(g.grad(s).data().data());
  }
}
BENCHMARK(BM_DcrLossSimilarities)->Arg(8)->Arg(64);

// One full DCR training step's forward and backward at the default model size.
static void BM_DcrBatchStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  ModelConfig mc;
  Model m(mc, 1);
  const Dataset ds = generate_synthetic({4, 16, mc.height, mc.width, 7});
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = (i * 7) % ds.size();
  Rng rng = make_rng(1, 99);
  const TrainBatch b = make_batch(ds, idx, AugmentConfig{}, m.schedule, rng);
  m.denoiser.frozen = true;
  for (auto _ : state) {
    Graph g;
    Var loss = dcr_batch_loss(g, m, g.constant(b.x), g.constant(b.x_aug), b, kDefaultTau);
    g.backward(loss);
    benchmark::DoNotOptimize(loss.value().item());
  }
  for (Parameter* p : m.parameters()) p->zero_grad();
}
BENCHMARK(BM_DcrBatchStep)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_NaiveStepGradients(benchmark::State& state) {
  ModelConfig mc;
  Model m(mc, 1);
  m.denoiser.frozen = true;
  const Dataset ds = generate_synthetic({4, 16, mc.height, mc.width, 7});
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (i * 5) % ds.size();
  Rng rng = make_rng(2, 99);
  const TrainBatch b = make_batch(ds, idx, AugmentConfig{}, m.schedule, rng);
  const TrainConfig cfg;
  for (auto _ : state) {
    const NaiveStepResult r = naive_step_gradients(m, b, cfg);
    benchmark::DoNotOptimize(r.cos);
  }
}
BENCHMARK(BM_NaiveStepGradients)->Unit(benchmark::kMillisecond);

static void BM_KMeans(benchmark::State& state) {
  const Tensor pts = random_matrix(static_cast<std::size_t>(state.range(0)), 32, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(pts, 10, 1, 100, 5).inertia);
}
BENCHMARK(BM_KMeans)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
