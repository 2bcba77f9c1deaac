#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "condensa/condenser.hpp"
#include "condensa/datagen.hpp"
#include "condensa/memory.hpp"
#include "condensa/model.hpp"
#include "condensa/ops.hpp"
#include "condensa/rng.hpp"

using namespace condensa;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, bool grad = false) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::size_t side = static_cast<std::size_t>(state.range(0));
  Tensor x = uniform({8, 3, side, side}, 1, true);
  Tensor k = uniform({8, 3, 3, 3}, 2, true), b = uniform({8}, 3, true);
  for (auto _ : state) {
    Graph g;
    Tensor loss = ops::sum(g, ops::conv2d(g, x, k, b, 1, 1));
    g.backward(loss);
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(32);

void BM_ExtractFeatures(benchmark::State& state) {
  const ModelParams p = extend_head(ModelParams::init(3, 0.125, 1), 8, 2).frozen();
  const Tensor clip = uniform({8, 3, 32, 32}, 4);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(extract_features(g, clip, p).embedding.data().data());
  }
}
BENCHMARK(BM_ExtractFeatures);

void BM_ExtractFrameFeatures(benchmark::State& state) {
  const ModelParams p = extend_head(ModelParams::init(3, 0.125, 1), 8, 2).frozen();
  const Tensor frame = uniform({3, 32, 32}, 5);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(extract_frame_features(g, frame, 8, p).embedding.data().data());
  }
}
BENCHMARK(BM_ExtractFrameFeatures);

void BM_CondenseIteration(benchmark::State& state) {
  const ModelParams p = extend_head(ModelParams::init(3, 0.125, 1), 8, 2).frozen();
  const Tensor clip = uniform({8, 3, 32, 32}, 6);
  const Tensor target = clip_embedding(clip, p);
  CondenseState s;
  s.weights = Tensor::zeros({8}, true);
  s.prompt = Tensor::zeros({3, 32, 32}, true);
  const CondenseConfig cfg;
  for (auto _ : state) {
    Graph g;
    Tensor root = condensing_objective(g, s, clip, target, 3, p, cfg, nullptr);
    g.backward(root);
    benchmark::DoNotOptimize(s.prompt.grad().data());
  }
}
BENCHMARK(BM_CondenseIteration);

void BM_HerdingSelect(benchmark::State& state) {
  Rng rng = make_rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> x(static_cast<std::size_t>(state.range(0)), std::vector<double>(kEmbeddingDim));
  for (auto& row : x)
    for (double& v : row) v = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(herding_select(x, 5));
}
BENCHMARK(BM_HerdingSelect)->Arg(20)->Arg(200);

void BM_RenderClip(benchmark::State& state) {
  const SynthSpec spec;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(render_clip(spec, class_params(4), seed++).pixels.data());
}
BENCHMARK(BM_RenderClip);

}  // namespace

BENCHMARK_MAIN();
