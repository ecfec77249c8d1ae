#include <benchmark/benchmark.h>

#include "cdnet/network.hpp"
#include "cdnet/rng.hpp"
#include "cdnet/swin.hpp"

namespace {

using namespace cdnet;

Tensor rand_t(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(s), std::move(v));
}

void BM_WindowAttention(benchmark::State& state) {
  Rng rng(6);
  ParamRegistry reg;
  SwinStageConfig sc;
  sc.dim = state.range(0);
  sc.heads = 2;
  sc.window = 4;
  sc.depth = 2;
  SwinStage stage = make_swin_stage(reg, rng, "s", sc);
  Tensor x = rand_t(rng, {1, 16, 16, sc.dim});
  for (auto _ : state) benchmark::DoNotOptimize(stage(x));
}
BENCHMARK(BM_WindowAttention)->Arg(8)->Arg(16)->Arg(32);

void BM_ToyForward(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::toy();
  ChangeNet net(cfg, 7);
  Rng rng(8);
  Tensor t1 = rand_t(rng, {1, 3, cfg.input_h, cfg.input_w}, 0.0, 1.0);
  Tensor t2 = rand_t(rng, {1, 3, cfg.input_h, cfg.input_w}, 0.0, 1.0);
  for (auto _ : state)
    benchmark::DoNotOptimize(net.forward(t1, t2, Mode::kEval));
}
BENCHMARK(BM_ToyForward)->Unit(benchmark::kMillisecond);

}  // namespace
