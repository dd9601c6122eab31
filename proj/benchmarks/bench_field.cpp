#include <benchmark/benchmark.h>

#include "ponp/field.hpp"

using namespace ponp;

static void BM_FieldEval(benchmark::State& state) {
  FieldConfig cfg;
  cfg.arch = state.range(1) == 0 ? FieldArch::relu_mlp : FieldArch::siren;
  cfg.width = 64;
  cfg.depth = 3;
  cfg.omega0 = 30.0f;
  cfg.conditioning = Conditioning::concat;
  cfg.cond_dim = 32;
  ConditionedField f = init_field(cfg, 1);
  Rng rng(2);
  Tensor coords =
      Tensor::uniform({static_cast<int>(state.range(0)), 2}, -1, 1, rng);
  Tensor z = Tensor::uniform({1, 32}, -1, 1, rng);
  for (auto _ : state) {
    FieldOutput out = f(coords, z);
    benchmark::DoNotOptimize(out.mean.values().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * state.range(0));
}
BENCHMARK(BM_FieldEval)->Args({1024, 0})->Args({4096, 0})->Args({4096, 1});

static void BM_FieldTrainStep(benchmark::State& state) {
  FieldConfig cfg;
  cfg.arch = FieldArch::relu_mlp;
  cfg.width = 64;
  cfg.depth = 3;
  ConditionedField f = init_field(cfg, 1);
  Rng rng(2);
  Tensor coords = Tensor::uniform({2048, 2}, -1, 1, rng);
  Tensor target = Tensor::uniform({2048, 1}, 0, 1, rng);
  for (auto _ : state) {
    FieldOutput out = f(coords, std::nullopt);
    Tensor loss = mse(out.mean, target);
    backward(loss);
    f.params.zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 2048);
}
BENCHMARK(BM_FieldTrainStep);
