// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Usage: lineagetrack_acceptance [work-dir]
// The sparse-store memory probe re-executes this binary with --sparse-probe so
// that its peak resident size is measured in a fresh process.

#include "cli.hpp"

#include <lineagetrack/chunked_store.hpp>
#include <lineagetrack/dataset.hpp>
#include <lineagetrack/metrics.hpp>
#include <lineagetrack/tracker.hpp>

#include "test_support.hpp"

#include <nlohmann/json.hpp>

#include <sys/resource.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace lineagetrack;
namespace fs = std::filesystem;
namespace lt = lineagetrack::testing;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const Verdict& v) {
  std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  if (!v.pass) ++g_failures;
}

template <class Fn>
void criterion(const std::string& name, Fn&& fn) {
  try {
    report(name, fn());
  } catch (const std::exception& e) {
    report(name, {false, std::string("exception: ") + e.what()});
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// res_track.txt followed by every mask###.tif, in name order.
std::string result_bytes(const fs::path& dir) {
  std::vector<fs::path> masks;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("mask", 0) == 0 && e.path().extension() == ".tif") masks.push_back(e.path());
  }
  std::sort(masks.begin(), masks.end());
  std::string all = read_bytes(dir / "res_track.txt");
  for (const fs::path& m : masks) all += read_bytes(m);
  return all;
}

void run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lineagetrack");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw std::runtime_error("lineagetrack exited " + std::to_string(code) + ": " + err.str());
}

struct DivisionCheck {
  int reference = 0;
  int found = 0;
  /// Result tracklets with children but not exactly two.
  int non_binary = 0;
};

// A reference division counts as found when the result has one parent
// tracklet ending at the parent's matched last mask with exactly the two
// daughters' matched first masks starting its two children.
DivisionCheck check_divisions(const LoadedResult& ref, const LoadedResult& res) {
  const NodeMatching m = match_nodes(ref.frames, res.frames);
  std::map<MaskRef, int> owner;
  for (const auto& [id, t] : res.forest.tracklets())
    for (const MaskRef& r : t.refs) owner[r] = id;
  auto matched = [&](const MaskRef& r) -> std::optional<MaskRef> {
    const auto it = m.ref_to_comp.find(r);
    if (it == m.ref_to_comp.end()) return std::nullopt;
    return it->second;
  };

  DivisionCheck c;
  for (const auto& [id, t] : res.forest.tracklets()) {
    const std::size_t n = res.forest.children_of(id).size();
    if (n != 0 && n != 2) ++c.non_binary;
  }
  for (const auto& [id, t] : ref.forest.tracklets()) {
    const std::vector<int> kids = ref.forest.children_of(id);
    if (kids.empty()) continue;
    ++c.reference;
    if (kids.size() != 2) continue;
    const auto p = matched(t.refs.back());
    const auto a = matched(ref.forest.at(kids[0]).refs.front());
    const auto b = matched(ref.forest.at(kids[1]).refs.front());
    if (!p || !a || !b || !owner.count(*p) || !owner.count(*a) || !owner.count(*b)) continue;
    const Tracklet& parent = res.forest.at(owner.at(*p));
    const Tracklet& da = res.forest.at(owner.at(*a));
    const Tracklet& db = res.forest.at(owner.at(*b));
    if (parent.refs.back() != *p || da.refs.front() != *a || db.refs.front() != *b || da.id == db.id) continue;
    if (da.parent == parent.id && db.parent == parent.id && res.forest.children_of(parent.id).size() == 2) ++c.found;
  }
  return c;
}

// ---------------------------------------------------------------------------

Verdict aogm_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240601);
  const int n = 600;
  int nontrivial = 0;
  for (int i = 0; i < n; ++i) {
    const lt::AogmInstance inst = lt::random_aogm_instance(rng, 6, 8);
    const lt::EditCounts want = lt::brute_force_edit_counts(inst.ref_frames, inst.ref, inst.comp_frames, inst.comp);
    const AogmCounts got =
        aogm(inst.ref, inst.ref_frames, inst.comp, inst.comp_frames, match_nodes(inst.ref_frames, inst.comp_frames)).counts;
    const lt::EditCounts have{got.ns, got.fn, got.fp, got.ed, got.ea, got.ec};
    if (!(have == want))
      return {false, "instance " + std::to_string(i) + ": got " + lt::describe(have) + ", oracle " + lt::describe(want)};
    if (!(want == lt::EditCounts{})) ++nontrivial;
  }
  const double secs = seconds_since(start);
  return {secs < 60.0, std::to_string(n) + " instances (" + std::to_string(nontrivial) + " with edits) exact in " +
                           fmt(secs, 2) + " s (limit 60 s)"};
}

Verdict metric_identities(const fs::path& easy2d) {
  const LoadedResult gt = read_result(easy2d / "gt");
  const EvalReport self = evaluate(gt.forest, gt.frames, gt.forest, gt.frames);

  std::vector<DetectionSet> empty_frames;
  for (std::size_t t = 0; t < gt.frames.size(); ++t) empty_frames.emplace_back(static_cast<int>(t));
  const EvalReport none = evaluate(gt.forest, gt.frames, LineageForest{}, empty_frames);

  // Two nodes of one cell joined by a migration edge; the result keeps both
  // nodes but drops the edge.
  std::vector<DetectionSet> frames{DetectionSet(0), DetectionSet(1)};
  frames[0].insert(lt::box_mask(1, 0, {0, 0, 0}, {1, 4, 4}));
  frames[1].insert(lt::box_mask(1, 1, {0, 0, 0}, {1, 4, 4}));
  LineageForest linked, split;
  linked.put(lt::make_tracklet(1, {{0, 1}, {1, 1}}));
  split.put(lt::make_tracklet(1, {{0, 1}}));
  std::vector<DetectionSet> split_frames{DetectionSet(0), DetectionSet(1)};
  split_frames[0].insert(lt::box_mask(1, 0, {0, 0, 0}, {1, 4, 4}));
  split_frames[1].insert(lt::box_mask(2, 1, {0, 0, 0}, {1, 4, 4}));
  split.put(lt::make_tracklet(2, {{1, 2}}));
  const double fixture = evaluate(linked, frames, split, split_frames).tra;

  const bool ok = self.tra == 1.0 && self.seg == 1.0 && none.tra == 0.0 && none.aogm.total == none.aogm.aogm0 &&
                  std::abs(fixture - 0.930233) <= 1e-6;
  return {ok, "TRA(x,x)=" + fmt(self.tra, 6) + " SEG(x,x)=" + fmt(self.seg, 6) + " empty TRA=" + fmt(none.tra, 6) +
                  " (AOGM " + fmt(none.aogm.total, 1) + " vs AOGM0 " + fmt(none.aogm.aogm0, 1) + ") fixture TRA=" +
                  fmt(fixture, 6) + " (want 0.930233 +- 1e-6)"};
}

Verdict backward_linking(const fs::path& easy2d, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  run_cli({"--workers", "1", "link", "--data", easy2d.string(), "--out", out.string()});
  const double secs = seconds_since(start);

  const LoadedResult gt = read_result(easy2d / "gt");
  const LoadedResult res = read_result(out);
  const EvalReport r = evaluate(gt.forest, gt.frames, res.forest, res.frames);
  const DivisionCheck d = check_divisions(gt, res);
  const bool ok = r.tra >= 0.99 && d.reference == 2 && d.found == d.reference && d.non_binary == 0 && secs < 60.0;
  return {ok, "TRA=" + fmt(r.tra) + " (min 0.99) divisions " + std::to_string(d.found) + "/" +
                  std::to_string(d.reference) + " binary, non-binary parents " + std::to_string(d.non_binary) + ", " +
                  fmt(secs, 2) + " s single-threaded (limit 60 s)"};
}

Verdict forward_tracking(const fs::path& embryo3d, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  run_cli({"--workers", "1", "track3d", "--data", embryo3d.string(), "--out", out.string()});
  const double secs = seconds_since(start);

  const LoadedResult gt = read_result(embryo3d / "gt");
  const LoadedResult res = read_result(out);
  const EvalReport r = evaluate(gt.forest, gt.frames, res.forest, res.frames);
  const DivisionCheck d = check_divisions(gt, res);

  const int n_frames = static_cast<int>(gt.frames.size());
  const auto spurious = read_points(embryo3d / "spurious.txt", n_frames, 3);
  const auto used = read_points(out / "centers_used.txt", n_frames, 3);
  int n_spurious = 0, leaked = 0;
  for (int t = 0; t < n_frames; ++t)
    for (const Coord& c : spurious[t]) {
      ++n_spurious;
      leaked += std::count(used[t].begin(), used[t].end(), c) > 0;
    }
  const bool ok = r.tra >= 0.95 && r.seg >= 0.70 && leaked == 0 && n_spurious > 0 && secs < 300.0;
  return {ok, "TRA=" + fmt(r.tra) + " (min 0.95) SEG=" + fmt(r.seg) + " (min 0.70) spurious centers used " +
                  std::to_string(leaked) + "/" + std::to_string(n_spurious) + ", divisions " + std::to_string(d.found) +
                  "/" + std::to_string(d.reference) + ", " + fmt(secs, 1) + " s (limit 300 s)"};
}

// Written independently of decide_link: rank indices by (score desc, index
// asc), then read the outcome off the top two ranks.
LinkDecision rule(const std::vector<double>& s) {
  if (s.empty()) return LinkDecision::missing();
  std::vector<std::size_t> rank(s.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  if (s[rank[0]] >= 0.8) return LinkDecision::link(rank[0]);
  if (s.size() >= 2 && s[rank[0]] - s[rank[1]] < 0.1)
    return LinkDecision::divide(std::min(rank[0], rank[1]), std::max(rank[0], rank[1]));
  return LinkDecision::missing();
}

Verdict decision_rules() {
  const TrackerConfig cfg; // defaults: s_link 0.8, delta 0.1
  if (cfg.s_link != 0.8 || cfg.delta_mitosis != 0.1) return {false, "default thresholds changed"};
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> len(0, 6);
  std::uniform_real_distribution<double> cont(-1.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 40); // multiples of 0.025 hit the thresholds exactly
  const int n = 10000;
  std::map<LinkDecision::Kind, int> seen;
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(static_cast<std::size_t>(len(rng)));
    for (double& v : s) v = (i % 2 == 0) ? cont(rng) : grid(rng) * 0.025;
    const LinkDecision want = rule(s), got = decide_link(s, cfg);
    if (!(got == want)) return {false, "vector " + std::to_string(i) + " disagrees with the rule"};
    ++seen[want.kind];
  }
  return {true, std::to_string(n) + " vectors agree (link " + std::to_string(seen[LinkDecision::Kind::link]) +
                    ", divide " + std::to_string(seen[LinkDecision::Kind::divide]) + ", missing " +
                    std::to_string(seen[LinkDecision::Kind::missing]) + ")"};
}

Verdict determinism(const fs::path& easy2d, const fs::path& embryo3d, const fs::path& work,
                    const fs::path& link_w1, const fs::path& track_w1) {
  std::string detail;
  bool ok = true;
  const std::pair<std::string, std::pair<fs::path, fs::path>> modes[] = {{"link", {easy2d, link_w1}},
                                                                          {"track3d", {embryo3d, track_w1}}};
  for (const auto& [mode, paths] : modes) {
    const std::string baseline = result_bytes(paths.second);
    int identical = 1;
    for (const char* w : {"4", "8"}) {
      const fs::path out = work / (mode + "-w" + w);
      run_cli({"--workers", w, mode, "--data", paths.first.string(), "--out", out.string()});
      identical += result_bytes(out) == baseline;
    }
    ok = ok && identical == 3;
    detail += mode + " " + std::to_string(identical) + "/3 identical; ";
  }
  return {ok, detail + "workers 1, 4, 8"};
}

Verdict chunked_dense(const fs::path& work) {
  const Shape shape{40, 150, 170};
  const int n_frames = 3;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> value(0, 65535);
  ChunkedVolume store = ChunkedVolume::create(work / "dense.zarr", n_frames, shape, 3, Dtype::u16, {}, {1, 16, 32, 48});
  std::vector<Volume> dense;
  for (int t = 0; t < n_frames; ++t) {
    Volume v(shape, Dtype::u16, 3, t);
    for (float& x : v.data()) x = static_cast<float>(value(rng));
    store.write_frame(t, v);
    dense.push_back(std::move(v));
  }
  const ChunkedVolume reopened = ChunkedVolume::open(work / "dense.zarr");
  auto lo_hi = [&](int extent) {
    // Boxes may start before 0 and end past the extent; outside is zero.
    std::uniform_int_distribution<int> a(-8, extent + 4), l(1, 40);
    const int lo = a(rng);
    return std::pair{lo, lo + l(rng)};
  };
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const int t = std::uniform_int_distribution<int>(0, n_frames - 1)(rng);
    const auto [z0, z1] = lo_hi(shape.z);
    const auto [y0, y1] = lo_hi(shape.y);
    const auto [x0, x1] = lo_hi(shape.x);
    const Box box{{z0, y0, x0}, {z1, y1, x1}};
    const Volume got = reopened.read_box(t, box);
    const Volume want = dense[t].crop(box);
    if (got.shape() != want.shape() || !std::equal(got.data().begin(), got.data().end(), want.data().begin()))
      return {false, "box " + std::to_string(i) + " differs from the dense crop"};
  }
  return {true, std::to_string(n) + " random boxes equal the dense crop"};
}

// Runs in a fresh process: builds a virtual store of 2 x 1024^3 u16 voxels
// (4 GiB) in which only a few chunks exist, reads 64^3 patches and prints
// the peak resident size.
constexpr int kSparseSide = 1024;
constexpr int kSparseFrames = 2;
const std::vector<std::int64_t> kSparseChunks{1, 32, 64, 64};

std::uint16_t pattern(std::size_t i) { return static_cast<std::uint16_t>((i * 7 + 13) & 0xffff); }

int sparse_probe(const fs::path& dir) {
  const Shape shape{kSparseSide, kSparseSide, kSparseSide};
  ChunkedVolume::create(dir, kSparseFrames, shape, 3, Dtype::u16, {}, kSparseChunks);
  // A handful of chunks with a known pattern; every other chunk reads as fill.
  const std::vector<std::array<int, 4>> written{{0, 3, 5, 7}, {1, 10, 2, 2}, {1, 31, 15, 15}, {0, 0, 0, 0}};
  const std::size_t n = 32 * 64 * 64;
  for (const auto& c : written) {
    std::string bytes(n * 2, '\0');
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint16_t v = pattern(i);
      bytes[2 * i] = static_cast<char>(v & 0xff);
      bytes[2 * i + 1] = static_cast<char>(v >> 8);
    }
    std::ofstream(dir / (std::to_string(c[0]) + "." + std::to_string(c[1]) + "." + std::to_string(c[2]) + "." +
                         std::to_string(c[3])),
                  std::ios::binary)
        << bytes;
  }
  auto expected = [&](int t, const Coord& p) -> float {
    const int cz = p.z / 32, cy = p.y / 64, cx = p.x / 64;
    for (const auto& c : written)
      if (c[0] == t && c[1] == cz && c[2] == cy && c[3] == cx)
        return pattern(static_cast<std::size_t>((p.z - cz * 32) * 64 * 64 + (p.y - cy * 64) * 64 + (p.x - cx * 64)));
    return 0.0f;
  };

  const ChunkedVolume store = ChunkedVolume::open(dir);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> corner(0, kSparseSide - 64);
  std::vector<std::pair<int, Coord>> origins;
  for (const auto& c : written) origins.push_back({c[0], {c[1] * 32 - 16, c[2] * 64 + 20, c[3] * 64 - 10}});
  for (int i = 0; i < 60; ++i) origins.push_back({i % kSparseFrames, {corner(rng), corner(rng), corner(rng)}});
  long mismatches = 0, nonzero = 0;
  for (const auto& [t, o] : origins) {
    const Box box{o, {o.z + 64, o.y + 64, o.x + 64}};
    const Volume v = store.read_box(t, box);
    for (int z = 0; z < 64; ++z)
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const Coord g{o.z + z, o.y + y, o.x + x};
          const float want = (g.z < 0 || g.y < 0 || g.x < 0) ? 0.0f : expected(t, g);
          const float got = v.at({z, y, x});
          mismatches += got != want;
          nonzero += got != 0.0f;
        }
  }
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  const double virtual_bytes = double(kSparseFrames) * kSparseSide * kSparseSide * kSparseSide * 2;
  std::cout << "maxrss_kb=" << ru.ru_maxrss << " patches=" << origins.size() << " mismatches=" << mismatches
            << " nonzero=" << nonzero << " chunks_read=" << store.chunks_read() << " virtual_bytes=" << virtual_bytes
            << std::endl;
  return 0;
}

Verdict chunked_memory(const fs::path& self, const fs::path& work) {
  const fs::path dir = work / "sparse.zarr";
  const std::string cmd = "'" + self.string() + "' --sparse-probe '" + dir.string() + "'";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "cannot start the probe process"};
  std::string line;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) line += buf;
  const int status = pclose(pipe);
  long rss_kb = -1, mismatches = -1, nonzero = -1, patches = -1;
  double virtual_bytes = 0;
  if (status != 0 || std::sscanf(line.c_str(), "maxrss_kb=%ld patches=%ld mismatches=%ld nonzero=%ld", &rss_kb, &patches,
                                 &mismatches, &nonzero) != 4)
    return {false, "probe failed: " + line};
  const auto vb = line.find("virtual_bytes=");
  if (vb != std::string::npos) virtual_bytes = std::stod(line.substr(vb + 14));
  const double rss_mb = rss_kb / 1024.0;
  const bool ok = rss_mb < 50.0 && mismatches == 0 && nonzero > 0 && virtual_bytes >= 4e9;
  return {ok, std::to_string(patches) + " patches of 64^3 from a " + fmt(virtual_bytes / 1e9, 2) +
                  " GB store, peak RSS " + fmt(rss_mb, 1) + " MB (limit 50 MB), value mismatches " +
                  std::to_string(mismatches)};
}

} // namespace

int main(int argc, char** argv) {
  if (argc == 3 && std::strcmp(argv[1], "--sparse-probe") == 0) return sparse_probe(argv[2]);

  std::optional<lt::TempDir> tmp;
  fs::path work;
  if (argc >= 2) {
    work = argv[1];
    fs::create_directories(work);
  } else {
    tmp.emplace();
    work = tmp->path();
  }
  const fs::path self = fs::read_symlink("/proc/self/exe");
  const fs::path easy2d = work / "easy2d", embryo3d = work / "embryo3d";
  const fs::path link_w1 = work / "link-w1", track_w1 = work / "track3d-w1";

  try {
    run_cli({"synth", "--preset", "easy2d", "--out", easy2d.string()});
    run_cli({"synth", "--preset", "embryo3d", "--out", embryo3d.string()});
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << std::endl;
    return 1;
  }

  criterion("metrics oracle equivalence", aogm_oracle);
  criterion("metric identities", [&] { return metric_identities(easy2d); });
  criterion("backward linking end-to-end (easy2d)", [&] { return backward_linking(easy2d, link_w1); });
  criterion("forward 3D tracking end-to-end (embryo3d)", [&] { return forward_tracking(embryo3d, track_w1); });
  criterion("decision rules", decision_rules);
  criterion("determinism across worker counts", [&] { return determinism(easy2d, embryo3d, work, link_w1, track_w1); });
  criterion("chunked store equals dense slices", [&] { return chunked_dense(work); });
  criterion("chunked store patch reads in bounded memory", [&] { return chunked_memory(self, work); });

  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
