#include <lineagetrack/chunked_store.hpp>
#include <lineagetrack/dataset.hpp>
#include <lineagetrack/error.hpp>
#include <lineagetrack/synth.hpp>
#include <lineagetrack/tiff_io.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

using namespace lineagetrack;
using lineagetrack::testing::box_mask;
using lineagetrack::testing::make_tracklet;
using lineagetrack::testing::TempDir;

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

Volume random_volume(const Shape& s, int ndim, std::mt19937_64& rng) {
  Volume v(s, Dtype::u16, ndim);
  std::uniform_int_distribution<int> d(0, 65535);
  for (float& x : v.data()) x = static_cast<float>(d(rng));
  return v;
}

} // namespace

TEST(FrameFileName, PadsToThreeDigits) {
  EXPECT_EQ(frame_file_name("t", 7), "t007.tif");
  EXPECT_EQ(frame_file_name("mask", 123), "mask123.tif");
  EXPECT_EQ(frame_file_name("t", 1000), "t1000.tif");
}

TEST(Tiff, RoundTripsEveryDtype) {
  TempDir dir;
  std::mt19937_64 rng(1);
  for (Dtype dt : {Dtype::u8, Dtype::u16, Dtype::f32})
    for (const auto& [shape, ndim] : {std::pair{Shape{1, 7, 9}, 2}, std::pair{Shape{3, 5, 6}, 3}}) {
      Volume v(shape, dt, ndim);
      std::uniform_real_distribution<float> u(0.0f, dt == Dtype::u8 ? 255.0f : 60000.0f);
      for (float& x : v.data()) x = dt == Dtype::f32 ? u(rng) : std::round(u(rng));
      const fs::path p = dir / ("v_" + std::string(to_string(dt)) + std::to_string(ndim) + ".tif");
      write_tiff(p, v);
      const Volume back = read_tiff(p);
      ASSERT_EQ(back.shape(), shape);
      ASSERT_EQ(back.ndim(), ndim);
      ASSERT_EQ(back.dtype(), dt);
      ASSERT_TRUE(std::equal(v.data().begin(), v.data().end(), back.data().begin()));
    }
}

TEST(Tiff, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_THROW(read_tiff(dir / "nope.tif"), IoError);
}

TEST(Tiff, LabelImageRejectsFloatsAndLargeLabels) {
  TempDir dir;
  write_tiff(dir / "f.tif", Volume({1, 4, 4}, Dtype::f32, 2));
  EXPECT_THROW(read_label_tiff(dir / "f.tif"), Error);
  LabelImage img{{1, 2, 2}, 2, {0, 1, 70000, 2}};
  EXPECT_THROW(write_label_tiff(dir / "l.tif", img), Error);
}

TEST(LabelSequence, RoundTrip) {
  TempDir dir;
  const Shape shape{1, 16, 16};
  std::vector<DetectionSet> frames{DetectionSet(0), DetectionSet(1)};
  frames[0].insert(box_mask(3, 0, {0, 1, 1}, {1, 4, 5}));
  frames[0].insert(box_mask(9, 0, {0, 8, 8}, {1, 10, 12}));
  frames[1].insert(box_mask(3, 1, {0, 2, 1}, {1, 5, 5}));
  write_label_sequence(dir.path(), frames, shape, 2);
  EXPECT_TRUE(fs::exists(dir / "mask000.tif"));
  EXPECT_EQ(read_label_sequence(dir.path()), frames);
  EXPECT_EQ(count_frames(dir.path(), "mask"), 2);
}

TEST(LabelSequence, GapAndShapeErrorsNameTheFile) {
  TempDir dir;
  const Shape shape{1, 8, 8};
  std::vector<DetectionSet> frames{DetectionSet(0)};
  write_label_sequence(dir.path(), frames, shape, 2);
  fs::copy_file(dir / "mask000.tif", dir / "mask002.tif");
  EXPECT_NE(error_of([&] { count_frames(dir.path(), "mask"); }).find("mask002.tif"), std::string::npos);

  fs::remove(dir / "mask002.tif");
  write_label_tiff(dir / "mask001.tif", LabelImage{{1, 4, 4}, 2, std::vector<std::int32_t>(16, 0)});
  EXPECT_NE(error_of([&] { read_label_sequence(dir.path()); }).find("mask001.tif"), std::string::npos);
}

TEST(ImageSequence, RoundTripAndEmptyDir) {
  TempDir dir;
  std::mt19937_64 rng(3);
  std::vector<Volume> frames{random_volume({1, 6, 7}, 2, rng), random_volume({1, 6, 7}, 2, rng)};
  write_image_sequence(dir.path(), frames);
  const InMemoryFrames back = read_image_sequence(dir.path());
  ASSERT_EQ(back.n_frames(), 2);
  EXPECT_TRUE(std::equal(frames[1].data().begin(), frames[1].data().end(), back.frame(1).data().begin()));
  TempDir empty;
  EXPECT_THROW(read_image_sequence(empty.path()), IoError);
}

TEST(TrackTable, ParsesRows) {
  const auto rows = parse_track_table("1 0 4 0\n2 5 9 1\n\n3 5 7 1\n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], (TrackRecord{2, 5, 9, 1}));
}

TEST(TrackTable, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of([] { parse_track_table("1 0 4 0\n2 5 x 1\n"); }).find("line 2"), std::string::npos);
  EXPECT_NE(error_of([] { parse_track_table("1 0 4 0\n2 5 9 7\n"); }).find("line 2: unknown parent 7"), std::string::npos);
  EXPECT_NE(error_of([] { parse_track_table("1 6 4 0\n"); }).find("line 1"), std::string::npos);
  EXPECT_NE(error_of([] { parse_track_table("1 0 4 0\n1 5 6 0\n"); }).find("duplicate label 1"), std::string::npos);
  EXPECT_NE(error_of([] { parse_track_table("1 0 4 0 9\n"); }).find("line 1"), std::string::npos);
}

TEST(TrackTable, FormatParseRoundTrip) {
  LineageForest f;
  f.put(make_tracklet(4, {{0, 4}, {1, 4}}));
  f.put(make_tracklet(6, {{2, 6}}, 4));
  f.put(make_tracklet(5, {{2, 5}, {3, 5}}, 4));
  const auto rows = track_records(f);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (TrackRecord{4, 0, 1, 0}));
  EXPECT_EQ(rows[1], (TrackRecord{5, 2, 3, 4}));
  EXPECT_EQ(parse_track_table(format_track_table(rows)), rows);
}

TEST(Points, ReadsCommentsAndValidates) {
  TempDir dir;
  write_text(dir / "p.txt", "# t y x\n0 3 4\n\n2 5 6\n0 1 1\n");
  const auto pts = read_points(dir / "p.txt", 3, 2);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0], (std::vector<Coord>{{0, 3, 4}, {0, 1, 1}}));
  EXPECT_TRUE(pts[1].empty());
  EXPECT_EQ(pts[2], (std::vector<Coord>{{0, 5, 6}}));

  write_text(dir / "bad.txt", "0 1 2 3\n");
  EXPECT_NE(error_of([&] { read_points(dir / "bad.txt", 3, 2); }).find("line 1"), std::string::npos);
  write_text(dir / "range.txt", "5 1 2\n");
  EXPECT_THROW(read_points(dir / "range.txt", 3, 2), IoError);

  write_points(dir / "out.txt", {{{1, 2, 3}}, {{4, 5, 6}, {7, 8, 9}}}, 3);
  EXPECT_EQ(read_points(dir / "out.txt", 2, 3), (std::vector<std::vector<Coord>>{{{1, 2, 3}}, {{4, 5, 6}, {7, 8, 9}}}));
}

TEST(Result, WriteReadRoundTrip) {
  TempDir dir;
  const SynthData d = synth_generate(synth_preset("tiny2d"));
  write_result(dir.path(), d.gt_forest, d.gt, synth_preset("tiny2d").shape, 2);
  EXPECT_TRUE(fs::exists(dir / "res_track.txt"));
  const LoadedResult r = read_result(dir.path());
  EXPECT_EQ(r.forest, d.gt_forest);
  EXPECT_EQ(r.frames, d.gt);
  TempDir empty;
  EXPECT_THROW(read_result(empty.path()), IoError);
}

TEST(Synth, DeterministicAndValid) {
  for (const std::string& name : synth_preset_names()) {
    if (name == "embryo3d") continue; // covered by the acceptance run
    const SynthScenario s = synth_preset(name);
    const SynthData a = synth_generate(s), b = synth_generate(s);
    ASSERT_EQ(a.gt_forest, b.gt_forest) << name;
    ASSERT_EQ(a.detections, b.detections) << name;
    ASSERT_TRUE(std::equal(a.frames.back().data().begin(), a.frames.back().data().end(), b.frames.back().data().begin()));
    ASSERT_TRUE(forest_validate(a.gt_forest, a.gt).empty()) << name;
    ASSERT_EQ(static_cast<int>(a.frames.size()), s.n_frames);
  }
}

TEST(Synth, DivisionsAppearInGroundTruth) {
  const SynthScenario s = synth_preset("easy2d");
  const SynthData d = synth_generate(s);
  for (const SynthDivision& div : s.divisions) {
    const auto kids = d.gt_forest.children_of(div.track);
    ASSERT_EQ(kids.size(), 2u) << "track " << div.track;
    EXPECT_EQ(d.gt_forest.at(div.track).t_end, div.t - 1);
    for (int k : kids) EXPECT_EQ(d.gt_forest.at(k).t_start, div.t);
  }
  // Dropped masks: detections are a subset of ground truth by count.
  std::size_t gt = 0, det = 0;
  for (std::size_t t = 0; t < d.gt.size(); ++t) gt += d.gt[t].size(), det += d.detections[t].size();
  EXPECT_LT(det, gt);
  EXPECT_EQ(d.detections.back().size(), d.gt.back().size());
}

TEST(Synth, ChangingSeedChangesData) {
  SynthScenario s = synth_preset("tiny2d");
  const SynthData a = synth_generate(s);
  s.seed += 1;
  const SynthData b = synth_generate(s);
  EXPECT_NE(a.gt, b.gt);
  EXPECT_THROW(synth_preset("nope"), Error);
}

TEST(ChunkedStore, MatchesDenseOracleOnRandomBoxes) {
  TempDir dir;
  std::mt19937_64 rng(99);
  const Shape shape{5, 37, 41};
  std::vector<Volume> dense;
  {
    ChunkedVolume store = ChunkedVolume::create(dir / "s.zarr", 3, shape, 3, Dtype::u16, {2, 1, 1}, {1, 2, 16, 16});
    for (int t = 0; t < 3; ++t) {
      dense.push_back(random_volume(shape, 3, rng));
      store.write_frame(t, dense.back());
    }
  }
  const ChunkedVolume store = ChunkedVolume::open(dir / "s.zarr");
  EXPECT_EQ(store.shape(), shape);
  EXPECT_EQ(store.spacing(), (Spacing{2, 1, 1}));
  std::uniform_int_distribution<int> tz(0, 2), lo_z(-3, 6), lo_y(-10, 40), lo_x(-10, 44), ext(1, 20);
  for (int i = 0; i < 1000; ++i) {
    const int t = tz(rng);
    const Coord lo{lo_z(rng), lo_y(rng), lo_x(rng)};
    const Box box{lo, {lo.z + ext(rng) / 4 + 1, lo.y + ext(rng), lo.x + ext(rng)}};
    const Volume got = store.read_box(t, box);
    const Volume want = dense[static_cast<std::size_t>(t)].crop(box);
    ASSERT_EQ(got.shape(), want.shape());
    ASSERT_TRUE(std::equal(got.data().begin(), got.data().end(), want.data().begin())) << "box " << box.lo << box.hi;
  }
}

TEST(ChunkedStore, BoxOutsideGridIsZeroAndReadsNoChunks) {
  TempDir dir;
  ChunkedVolume store = ChunkedVolume::create(dir / "s.zarr", 1, {1, 64, 64}, 2, Dtype::u16);
  std::mt19937_64 rng(4);
  store.write_frame(0, random_volume({1, 64, 64}, 2, rng));
  const ChunkedVolume r = ChunkedVolume::open(dir / "s.zarr");
  const Volume v = r.read_box(0, {{0, 100, 100}, {1, 110, 120}});
  EXPECT_EQ(v.shape(), (Shape{1, 10, 20}));
  EXPECT_TRUE(std::all_of(v.data().begin(), v.data().end(), [](float x) { return x == 0.0f; }));
  EXPECT_EQ(r.chunks_read(), 0u);
  r.read_box(0, {{0, 0, 0}, {1, 8, 8}});
  EXPECT_EQ(r.chunks_read(), 1u);
}

TEST(ChunkedStore, UnwrittenChunksReadAsFill) {
  TempDir dir;
  { ChunkedVolume::create(dir / "s.zarr", 2, {1, 20, 20}, 2, Dtype::f32); }
  const ChunkedVolume r = ChunkedVolume::open(dir / "s.zarr");
  const Volume v = r.read_frame(1);
  EXPECT_TRUE(std::all_of(v.data().begin(), v.data().end(), [](float x) { return x == 0.0f; }));
}

TEST(ChunkedStore, CorruptAndMissingStoresFail) {
  TempDir dir;
  {
    ChunkedVolume store = ChunkedVolume::create(dir / "s.zarr", 1, {1, 16, 16}, 2, Dtype::u16);
    std::mt19937_64 rng(5);
    store.write_frame(0, random_volume({1, 16, 16}, 2, rng));
  }
  fs::resize_file(dir / "s.zarr" / "0.0.0", 10);
  const ChunkedVolume r = ChunkedVolume::open(dir / "s.zarr");
  EXPECT_NE(error_of([&] { r.read_frame(0); }).find("corrupt chunk"), std::string::npos);
  EXPECT_THROW(ChunkedVolume::open(dir / "missing.zarr"), IoError);
  write_text(dir / "s.zarr" / ".zarray", "{not json");
  EXPECT_THROW(ChunkedVolume::open(dir / "s.zarr"), IoError);
  EXPECT_THROW(r.read_box(3, {{0, 0, 0}, {1, 1, 1}}), Error);
}
