#include <benchmark/benchmark.h>

#include "ponp/ops.hpp"

using namespace ponp;

static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::uniform({n, n}, -1, 1, rng);
  Tensor b = Tensor::uniform({n, n}, -1, 1, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_MlpForwardBackward(benchmark::State& state) {
  const int pts = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor x = Tensor::uniform({pts, 2}, -1, 1, rng);
  Tensor w1 = Tensor::uniform({2, 64}, -1, 1, rng, true);
  Tensor b1 = Tensor::zeros({1, 64}, true);
  Tensor w2 = Tensor::uniform({64, 64}, -0.2f, 0.2f, rng, true);
  Tensor b2 = Tensor::zeros({1, 64}, true);
  Tensor w3 = Tensor::uniform({64, 1}, -0.2f, 0.2f, rng, true);
  for (auto _ : state) {
    Tensor h = relu(add_rowvec(matmul(x, w1), b1));
    h = relu(add_rowvec(matmul(h, w2), b2));
    Tensor loss = mean_all(square(matmul(h, w3)));
    backward(loss);
    w1.zero_grad();
    b1.zero_grad();
    w2.zero_grad();
    b2.zero_grad();
    w3.zero_grad();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(1024)->Arg(4096);

static void BM_Conv2d(benchmark::State& state) {
  Rng rng(3);
  Tensor x = Tensor::uniform({16, 32, 32}, -1, 1, rng, true);
  Tensor w = Tensor::uniform({16, 16, 3, 3}, -0.2f, 0.2f, rng, true);
  Tensor b = Tensor::zeros({16}, true);
  for (auto _ : state) {
    Tensor y = conv2d(x, w, b, Padding::periodic);
    benchmark::DoNotOptimize(y.values().data());
  }
}
BENCHMARK(BM_Conv2d);
