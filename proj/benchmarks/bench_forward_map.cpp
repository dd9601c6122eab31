#include <benchmark/benchmark.h>

#include "ponp/forward_map.hpp"
#include "ponp/tasks.hpp"

using namespace ponp;

static void BM_IntegralProjection(benchmark::State& state) {
  Phantom p = gen_phantom(1);
  ProjectionSpec spec;
  spec.angles = {0.1f, 0.9f, 1.7f, 2.5f};
  spec.n_rays = static_cast<int>(state.range(0));
  spec.n_samples = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Tensor sino = apply_integral_projection_all(
        [&](const Tensor& pts) { return phantom_density(p, pts); }, spec);
    benchmark::DoNotOptimize(sino.values().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 4 * state.range(0) *
                          state.range(0));
}
BENCHMARK(BM_IntegralProjection)->Arg(64)->Arg(256);

static void BM_VolumeRender(benchmark::State& state) {
  ToyScene scene = gen_toy_scene(5);
  ToySceneConfig cfg;
  cfg.image_size = static_cast<int>(state.range(0));
  cfg.n_samples = 32;
  CameraSpec cam = toy_camera(0.4f, 0.1f, cfg);
  for (auto _ : state) {
    Tensor img = apply_volume_render(
        [&](const Tensor& pts) { return toy_scene_field(scene, pts); }, cam);
    benchmark::DoNotOptimize(img.values().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * cfg.image_size *
                          cfg.image_size * cfg.n_samples);
}
BENCHMARK(BM_VolumeRender)->Arg(32)->Arg(64);

static void BM_PhantomRaster(benchmark::State& state) {
  Phantom p = gen_phantom(7);
  for (auto _ : state) {
    Tensor grid = rasterize_phantom(p, static_cast<int>(state.range(0)));
    benchmark::DoNotOptimize(grid.values().data());
  }
}
BENCHMARK(BM_PhantomRaster)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
