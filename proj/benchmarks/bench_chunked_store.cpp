#include <lineagetrack/chunked_store.hpp>

#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

using namespace lineagetrack;
namespace fs = std::filesystem;

namespace {

// One 3D frame of 64 x 256 x 256 u16 voxels with default chunks, removed at exit.
struct Fixture {
  fs::path dir = fs::temp_directory_path() / ("lineagetrack-bench-" + std::to_string(std::random_device{}()));
  ChunkedVolume volume = make(dir);
  ~Fixture() { fs::remove_all(dir); }

  static ChunkedVolume make(const fs::path& dir) {
    ChunkedVolume v = ChunkedVolume::create(dir / "raw.zarr", 1, {64, 256, 256}, 3, Dtype::u16);
    Volume frame({64, 256, 256}, Dtype::u16, 3);
    std::mt19937 rng(1);
    for (float& x : frame.data()) x = static_cast<float>(rng() & 0xffff);
    v.write_frame(0, frame);
    return ChunkedVolume::open(dir / "raw.zarr");
  }
};

const ChunkedVolume& store() {
  static const Fixture f;
  return f.volume;
}

void BM_ReadBox(benchmark::State& state) {
  const ChunkedVolume& s = store();
  const int side = static_cast<int>(state.range(0));
  std::mt19937 rng(2);
  std::uniform_int_distribution<int> zc(0, 64 - std::min(side, 64)), yc(0, 256 - side);
  for (auto _ : state) {
    const Coord lo{zc(rng), yc(rng), yc(rng)};
    const Volume v = s.read_box(0, {lo, {lo.z + std::min(side, 64), lo.y + side, lo.x + side}});
    benchmark::DoNotOptimize(v.data().data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ReadBox)->Arg(16)->Arg(32)->Arg(64);

} // namespace
