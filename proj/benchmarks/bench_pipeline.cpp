#include <lineagetrack/frame_source.hpp>
#include <lineagetrack/linking.hpp>
#include <lineagetrack/oracle_backend.hpp>
#include <lineagetrack/synth.hpp>
#include <lineagetrack/tracker.hpp>

#include <benchmark/benchmark.h>

using namespace lineagetrack;

namespace {

void BM_BackwardLinkEasy2d(benchmark::State& state) {
  const SynthData d = synth_generate(synth_preset("easy2d"));
  const InMemoryFrames frames(d.frames);
  const OracleBackend oracle;
  ExecutionOptions exec;
  exec.workers = static_cast<int>(state.range(0));
  for (auto _ : state) {
    const LinkResult r = backward_link_pass(frames, d.detections, std::nullopt, oracle, LinkConfig{}, exec);
    benchmark::DoNotOptimize(r.forest.size());
  }
}
BENCHMARK(BM_BackwardLinkEasy2d)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ForwardTrackEmbryo3d(benchmark::State& state) {
  const SynthData d = synth_generate(synth_preset("embryo3d"));
  const InMemoryFrames frames(d.frames);
  const OracleBackend oracle;
  std::vector<Seed> seeds;
  for (const Coord& c : d.true_centers.front()) seeds.push_back({c, std::nullopt});
  for (auto _ : state) {
    const ForwardResult r = forward_track_pass(frames, d.centers, seeds, oracle, oracle, TrackerConfig{});
    benchmark::DoNotOptimize(r.forest.size());
  }
}
BENCHMARK(BM_ForwardTrackEmbryo3d)->Unit(benchmark::kMillisecond)->Iterations(1);

void BM_OracleEmbed(benchmark::State& state) {
  const SynthData d = synth_generate(synth_preset("easy2d"));
  const OracleBackend oracle;
  const Volume& frame = d.frames.front();
  const Box box = d.gt.front().masks().begin()->second.bbox();
  for (auto _ : state) benchmark::DoNotOptimize(oracle.embed(frame, box).feature);
}
BENCHMARK(BM_OracleEmbed);

void BM_DecideLink(benchmark::State& state) {
  const TrackerConfig cfg;
  const std::vector<double> scores{0.41, 0.77, 0.72, 0.1};
  for (auto _ : state) benchmark::DoNotOptimize(decide_link(scores, cfg));
}
BENCHMARK(BM_DecideLink);

} // namespace
