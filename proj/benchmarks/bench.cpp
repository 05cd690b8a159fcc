#include <benchmark/benchmark.h>

#include <vector>

#include "safire/inference.hpp"
#include "safire/losses.hpp"
#include "safire/metrics.hpp"
#include "safire/net.hpp"
#include "safire/rng.hpp"
#include "safire/synth.hpp"

using namespace safire;

static void BM_EncodeImage(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  auto sample = synth::generate_sample(11, size, 2);
  auto params = net::ModelParams::init(5);
  for (auto _ : state) {
    auto grid = net::encode_image(params, sample.image);
    benchmark::DoNotOptimize(grid);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_EncodeImage)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_R2RLoss(benchmark::State& state) {
  const int cells = static_cast<int>(state.range(0));
  const int dim = 16;
  Rng rng(21);
  std::vector<double> emb(static_cast<size_t>(cells) * dim);
  std::vector<int32_t> labels(static_cast<size_t>(cells));
  for (auto& v : emb) v = rng.normal();
  for (int i = 0; i < cells; ++i) labels[static_cast<size_t>(i)] = static_cast<int32_t>(rng.below(3));
  std::vector<double> grad(emb.size());
  losses::R2RBatch batch{dim, cells, emb.data(), labels.data(), 0.1, true};
  for (auto _ : state) {
    auto loss = losses::r2r_loss(batch, grad.data());
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * cells);
}
BENCHMARK(BM_R2RLoss)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

static void BM_KMeans(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(33);
  std::vector<std::vector<double>> feats(static_cast<size_t>(n), std::vector<double>(16));
  for (int i = 0; i < n; ++i) {
    double center = (i % 2 == 0) ? -1.0 : 1.0;
    for (auto& v : feats[static_cast<size_t>(i)]) v = center + 0.2 * rng.normal();
  }
  for (auto _ : state) {
    auto assign = inference::kmeans(feats, 2, 17);
    benchmark::DoNotOptimize(assign);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_KMeans)->Arg(64)->Arg(1024)->Unit(benchmark::kMicrosecond);

static void BM_PermutedMIoU(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(44);
  SourcePartition y(size, size, 4);
  SourcePartition x(size, size, 4);
  for (auto& v : y.data) v = static_cast<uint8_t>(rng.below(4));
  for (auto& v : x.data) v = static_cast<uint8_t>(rng.below(4));
  for (auto _ : state) {
    double m = metrics::permuted_miou(y, x);
    benchmark::DoNotOptimize(m);
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_PermutedMIoU)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
