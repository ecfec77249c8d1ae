#include <benchmark/benchmark.h>

#include "cdnet/losses.hpp"
#include "cdnet/rng.hpp"
#include "cdnet/tensor.hpp"

namespace {

using namespace cdnet;

Tensor rand_t(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0,
              bool rg = false) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(s), std::move(v), rg);
}

void BM_Conv2d3x3(benchmark::State& state) {
  Rng rng(1);
  const int64_t c = state.range(0);
  Tensor x = rand_t(rng, {1, c, 32, 32});
  Tensor w = rand_t(rng, {c, c, 3, 3});
  Tensor b = rand_t(rng, {c});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2d3x3)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dTranspose(benchmark::State& state) {
  Rng rng(2);
  const int64_t c = state.range(0);
  Tensor x = rand_t(rng, {1, c, 16, 16});
  Tensor w = rand_t(rng, {c, 1, 8, 8});
  Tensor b = rand_t(rng, {1});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_transpose(x, w, b, 4));
}
BENCHMARK(BM_Conv2dTranspose)->Arg(8)->Arg(16);

void BM_Matmul(benchmark::State& state) {
  Rng rng(3);
  const int64_t n = state.range(0);
  Tensor a = rand_t(rng, {n, n});
  Tensor b = rand_t(rng, {n, n});
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_HybridLoss(benchmark::State& state) {
  Rng rng(4);
  const int64_t hw = state.range(0);
  SideOutputs out;
  for (auto& s : out.side) s = rand_t(rng, {1, 1, hw, hw}, -3.0, 3.0);
  out.fused = rand_t(rng, {1, 1, hw, hw}, -3.0, 3.0);
  std::vector<double> gv(static_cast<size_t>(hw * hw));
  for (auto& g : gv) g = rng.uniform() < 0.3 ? 1.0 : 0.0;
  Tensor gt({1, 1, hw, hw}, gv);
  LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(hybrid_loss(out, gt, cfg));
}
BENCHMARK(BM_HybridLoss)->Arg(64)->Arg(128);

void BM_BackwardConv(benchmark::State& state) {
  Rng rng(5);
  Tensor x = rand_t(rng, {1, 8, 32, 32}, -1.0, 1.0, true);
  Tensor w = rand_t(rng, {8, 8, 3, 3}, -0.5, 0.5, true);
  Tensor b = rand_t(rng, {8}, -0.5, 0.5, true);
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    Graph g;
    Graph::Scope scope(g);
    Tensor loss = mean_all(conv2d(x, w, b, 1, 1));
    g.backward(loss);
    benchmark::DoNotOptimize(w.grad_ref().data());
  }
}
BENCHMARK(BM_BackwardConv);

}  // namespace

BENCHMARK_MAIN();
