#include <benchmark/benchmark.h>

#include "convseq/bench.hpp"
#include "convseq/loss.hpp"
#include "convseq/model.hpp"

using namespace convseq;

namespace {

ModelConfig small(ConvVariant v) {
  auto c = ModelConfig::mini(v);
  c.d_model = 64;
  c.d_ff = 256;
  return c;
}

// Forward + backward of the denoising loss on one synthetic example.
void BM_TrainStep(benchmark::State& state, ConvVariant variant) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Seq2SeqModel model(small(variant));
  const std::size_t m = bench_target_length(n);
  std::vector<std::int32_t> src(n), tgt(m);
  for (std::size_t i = 0; i < n; ++i) src[i] = 102 + static_cast<std::int32_t>((i * 37) % 256);
  for (std::size_t i = 0; i < m; ++i) tgt[i] = 102 + static_cast<std::int32_t>((i * 11) % 256);
  for (auto _ : state) {
    model.parameters().zero_grad();
    backward(seq_cross_entropy(model.forward(src, tgt), tgt));
  }
  state.counters["flops"] = static_cast<double>(count_flops(model.config(), n, m));
  state.SetComplexityN(state.range(0));
}
BENCHMARK_CAPTURE(BM_TrainStep, light, ConvVariant::light)->RangeMultiplier(2)->Range(64, 1024)->Complexity();
BENCHMARK_CAPTURE(BM_TrainStep, dynamic, ConvVariant::dynamic)->RangeMultiplier(2)->Range(64, 1024)->Complexity();
BENCHMARK_CAPTURE(BM_TrainStep, transformer, ConvVariant::transformer)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

void BM_CountFlops(benchmark::State& state) {
  const auto base = ModelConfig::base(ConvVariant::dynamic);
  for (auto _ : state) benchmark::DoNotOptimize(count_flops(base, 4096));
}
BENCHMARK(BM_CountFlops);

}  // namespace
BENCHMARK_MAIN();
