#include <benchmark/benchmark.h>

#include <random>

#include "hg/amp.hpp"
#include "hg/model.hpp"
#include "hg/ssm.hpp"

namespace {

hg::Tensor noise(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = g(rng);
  return hg::Tensor::from({rows, cols}, std::move(v));
}

void BM_SelectiveScan(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  hg::SelectiveConfig cfg;
  cfg.d_in = cfg.d_out = 16;
  std::mt19937_64 rng(1);
  hg::ParamStore store;
  auto p = hg::init_selective(store, "s", cfg, rng);
  const hg::Tensor x = noise(t, 16, 2);
  hg::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(hg::selective_scan(x, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(t));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SelectiveScan)->RangeMultiplier(2)->Range(256, 8192)->Complexity(benchmark::oN);

void BM_LocalAttention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  hg::LocalAttnParams p;
  p.window = 9;
  p.n_heads = 2;
  p.wq = noise(16, 16, 3);
  p.wk = noise(16, 16, 4);
  p.wv = noise(16, 16, 5);
  p.wo = noise(16, 16, 6);
  p.rel_bias = noise(2, 9, 7);
  const hg::Tensor x = noise(t, 16, 8);
  hg::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(hg::local_attention(x, p));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_LocalAttention)->RangeMultiplier(2)->Range(256, 8192)->Complexity(benchmark::oN);

void BM_EncodeVideo(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  hg::ModelConfig cfg;
  hg::Model model(cfg, 1);
  const hg::Tensor x = noise(t, cfg.d_video, 9);
  hg::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.encode_video(x));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EncodeVideo)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN);

}  // namespace

BENCHMARK_MAIN();
