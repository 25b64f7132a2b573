#include <lineagetrack/metrics.hpp>
#include <lineagetrack/synth.hpp>

#include <benchmark/benchmark.h>

using namespace lineagetrack;

namespace {

const SynthData& easy2d() {
  static const SynthData d = synth_generate(synth_preset("easy2d"));
  return d;
}

void BM_MatchNodes(benchmark::State& state) {
  const SynthData& d = easy2d();
  for (auto _ : state) benchmark::DoNotOptimize(match_nodes(d.gt, d.gt));
}
BENCHMARK(BM_MatchNodes);

void BM_Evaluate(benchmark::State& state) {
  const SynthData& d = easy2d();
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(d.gt_forest, d.gt, d.gt_forest, d.gt).tra);
}
BENCHMARK(BM_Evaluate);

} // namespace
