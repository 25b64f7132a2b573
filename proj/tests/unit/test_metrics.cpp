#include <lineagetrack/error.hpp>
#include <lineagetrack/metrics.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace lineagetrack;
using lineagetrack::testing::AogmInstance;
using lineagetrack::testing::box_mask;
using lineagetrack::testing::brute_force_edit_counts;
using lineagetrack::testing::describe;
using lineagetrack::testing::EditCounts;
using lineagetrack::testing::make_tracklet;
using lineagetrack::testing::random_aogm_instance;

namespace {

std::vector<DetectionSet> frames_of(int n) {
  std::vector<DetectionSet> f;
  for (int t = 0; t < n; ++t) f.emplace_back(t);
  return f;
}

// Two frames, one cell that persists: two nodes joined by a migration edge.
struct TwoNodeFixture {
  std::vector<DetectionSet> frames = frames_of(2);
  LineageForest forest;
  TwoNodeFixture() {
    frames[0].insert(box_mask(1, 0, {0, 0, 0}, {1, 4, 4}));
    frames[1].insert(box_mask(1, 1, {0, 0, 0}, {1, 4, 4}));
    forest.put(make_tracklet(1, {{0, 1}, {1, 1}}));
  }
};

EditCounts as_edit(const AogmCounts& c) { return {c.ns, c.fn, c.fp, c.ed, c.ea, c.ec}; }

AogmBreakdown run_aogm(const LineageForest& rf, const std::vector<DetectionSet>& r, const LineageForest& cf,
                       const std::vector<DetectionSet>& c, const AogmWeights& w = {}) {
  return aogm(rf, r, cf, c, match_nodes(r, c), w);
}

} // namespace

TEST(MatchNodes, IdenticalSetsMatchBijectively) {
  TwoNodeFixture f;
  const NodeMatching m = match_nodes(f.frames, f.frames);
  EXPECT_EQ(m.ref_to_comp.size(), 2u);
  for (const auto& [c, refs] : m.comp_to_ref) {
    ASSERT_EQ(refs.size(), 1u);
    EXPECT_EQ(refs.front(), c);
  }
}

TEST(MatchNodes, FortyPercentCoverageIsUnmatched) {
  auto ref = frames_of(1), comp = frames_of(1);
  ref[0].insert(box_mask(1, 0, {0, 0, 0}, {1, 1, 10}));
  comp[0].insert(box_mask(5, 0, {0, 0, 0}, {1, 1, 4}));
  const NodeMatching m = match_nodes(ref, comp);
  EXPECT_TRUE(m.ref_to_comp.empty());
  EXPECT_TRUE(m.comp_to_ref.at({0, 5}).empty());
}

TEST(MatchNodes, ExactlyHalfIsNotEnough) {
  auto ref = frames_of(1), comp = frames_of(1);
  ref[0].insert(box_mask(1, 0, {0, 0, 0}, {1, 1, 10}));
  comp[0].insert(box_mask(5, 0, {0, 0, 0}, {1, 1, 5}));
  EXPECT_TRUE(match_nodes(ref, comp).ref_to_comp.empty());
  comp[0] = DetectionSet(0);
  comp[0].insert(box_mask(5, 0, {0, 0, 0}, {1, 1, 6}));
  EXPECT_EQ(match_nodes(ref, comp).ref_to_comp.size(), 1u);
}

TEST(MatchNodes, CoveringMaskMatchesBothAndCountsAsSplit) {
  auto ref = frames_of(1), comp = frames_of(1);
  ref[0].insert(box_mask(1, 0, {0, 0, 0}, {1, 4, 4}));
  ref[0].insert(box_mask(2, 0, {0, 0, 4}, {1, 4, 8}));
  comp[0].insert(box_mask(9, 0, {0, 0, 0}, {1, 4, 8}));
  const NodeMatching m = match_nodes(ref, comp);
  EXPECT_EQ(m.comp_to_ref.at({0, 9}).size(), 2u);
  LineageForest rf, cf;
  rf.put(make_tracklet(1, {{0, 1}}));
  rf.put(make_tracklet(2, {{0, 2}}));
  cf.put(make_tracklet(1, {{0, 9}}));
  const AogmBreakdown b = aogm(rf, ref, cf, comp, m);
  EXPECT_EQ(b.counts.ns, 1);
  EXPECT_EQ(b.counts.fn, 0);
  EXPECT_DOUBLE_EQ(b.total, 5.0);
}

TEST(MatchNodes, RejectsMisalignedFrames) { EXPECT_THROW(match_nodes(frames_of(2), frames_of(3)), Error); }

TEST(Aogm, IdenticalGraphsCostNothing) {
  TwoNodeFixture f;
  const AogmBreakdown b = run_aogm(f.forest, f.frames, f.forest, f.frames);
  EXPECT_EQ(b.counts, AogmCounts{});
  EXPECT_EQ(b.total, 0.0);
  EXPECT_DOUBLE_EQ(b.aogm0, 2 * 10.0 + 1 * 1.5);
  EXPECT_DOUBLE_EQ(tra(b), 1.0);
}

TEST(Aogm, EmptyResultCostsTheReferenceGraph) {
  TwoNodeFixture f;
  const AogmBreakdown b = run_aogm(f.forest, f.frames, LineageForest{}, frames_of(2));
  EXPECT_EQ(b.counts.fn, 2);
  EXPECT_EQ(b.counts.ea, 1);
  EXPECT_DOUBLE_EQ(b.total, b.aogm0);
  EXPECT_DOUBLE_EQ(tra(b), 0.0);
}

TEST(Aogm, MissingEdgeFixture) {
  TwoNodeFixture f;
  LineageForest comp;
  comp.put(make_tracklet(1, {{0, 1}}));
  comp.put(make_tracklet(2, {{1, 1}}));
  const AogmBreakdown b = run_aogm(f.forest, f.frames, comp, f.frames);
  EXPECT_EQ(b.counts.ea, 1);
  EXPECT_DOUBLE_EQ(b.total, 1.5);
  EXPECT_NEAR(tra(b), 0.930233, 1e-6);
  EXPECT_NEAR(tra(b), 1.0 - 1.5 / 21.5, 1e-12);
  EXPECT_DOUBLE_EQ(b.edges, 1.5);
  EXPECT_EQ(as_edit(b.counts), brute_force_edit_counts(f.frames, f.forest, f.frames, comp));
}

TEST(Aogm, ParentLinkInsteadOfMigrationIsSemanticError) {
  TwoNodeFixture f;
  LineageForest comp;
  comp.put(make_tracklet(1, {{0, 1}}));
  comp.put(make_tracklet(2, {{1, 1}}, 1));
  const AogmBreakdown b = run_aogm(f.forest, f.frames, comp, f.frames);
  EXPECT_EQ(b.counts.ec, 1);
  EXPECT_EQ(b.counts.ea, 0);
  EXPECT_EQ(b.counts.ed, 0);
  EXPECT_DOUBLE_EQ(b.total, 1.0);
}

TEST(Aogm, SpuriousNodeAndEdge) {
  TwoNodeFixture f;
  auto comp_frames = f.frames;
  comp_frames[0].insert(box_mask(2, 0, {0, 8, 8}, {1, 10, 10}));
  comp_frames[1].insert(box_mask(2, 1, {0, 8, 8}, {1, 10, 10}));
  LineageForest comp = f.forest;
  comp.put(make_tracklet(2, {{0, 2}, {1, 2}}));
  const AogmBreakdown b = run_aogm(f.forest, f.frames, comp, comp_frames);
  EXPECT_EQ(b.counts.fp, 2);
  EXPECT_EQ(b.counts.ed, 1);
  EXPECT_DOUBLE_EQ(b.total, 3.0);
}

TEST(Aogm, TotalIsWeightedSumOfCounts) {
  std::mt19937_64 rng(77);
  const AogmWeights w{2.0, 7.0, 0.5, 3.0, 1.25, 4.0};
  for (int i = 0; i < 200; ++i) {
    const AogmInstance inst = random_aogm_instance(rng);
    if (inst.ref.empty()) continue;
    const AogmBreakdown b = run_aogm(inst.ref, inst.ref_frames, inst.comp, inst.comp_frames, w);
    const AogmCounts& c = b.counts;
    ASSERT_NEAR(b.total, w.ns * c.ns + w.fn * c.fn + w.fp * c.fp + w.ed * c.ed + w.ea * c.ea + w.ec * c.ec, 1e-9);
    ASSERT_NEAR(b.edges, w.ed * c.ed + w.ea * c.ea + w.ec * c.ec, 1e-9);
  }
}

TEST(Aogm, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(2024);
  int nontrivial = 0;
  for (int i = 0; i < 1500; ++i) {
    const AogmInstance inst = random_aogm_instance(rng);
    const AogmBreakdown b = run_aogm(inst.ref, inst.ref_frames, inst.comp, inst.comp_frames);
    const EditCounts expected = brute_force_edit_counts(inst.ref_frames, inst.ref, inst.comp_frames, inst.comp);
    ASSERT_EQ(as_edit(b.counts), expected) << "instance " << i << ": got " << describe(as_edit(b.counts)) << ", want "
                                           << describe(expected);
    if (b.total > 0) ++nontrivial;
  }
  EXPECT_GT(nontrivial, 1000);
}

TEST(Tra, AddingFalseNegativeLowersScoreByItsWeight) {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const AogmInstance inst = random_aogm_instance(rng);
    if (inst.ref.empty()) continue;
    const AogmBreakdown perfect = run_aogm(inst.ref, inst.ref_frames, inst.ref, inst.ref_frames);
    ASSERT_DOUBLE_EQ(tra(perfect), 1.0);

    // Drop an isolated single-frame tracklet from the result.
    for (const auto& [id, t] : inst.ref.tracklets()) {
      if (t.refs.size() != 1 || !inst.ref.children_of(id).empty() || t.parent) continue;
      auto frames = inst.ref_frames;
      frames[static_cast<std::size_t>(t.t_start)].erase(t.refs.front().label);
      LineageForest forest = inst.ref;
      forest.erase(id);
      const AogmBreakdown b = run_aogm(inst.ref, inst.ref_frames, forest, frames);
      ASSERT_EQ(b.counts.fn, 1);
      ASSERT_NEAR(tra(b), 1.0 - AogmWeights{}.fn / b.aogm0, 1e-12);
      ++checked;
      break;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Tra, ClampsAndRejectsEmptyReference) {
  AogmBreakdown b;
  b.aogm0 = 10;
  b.total = 25;
  EXPECT_EQ(tra(b), 0.0);
  b.aogm0 = 0;
  EXPECT_THROW(tra(b), Error);
}

TEST(Seg, CountArithmetic) {
  auto ref = frames_of(1), comp = frames_of(1);
  ref[0].insert(box_mask(1, 0, {0, 0, 0}, {1, 2, 5})); // 10 px
  comp[0].insert(box_mask(4, 0, {0, 0, 1}, {1, 2, 4})); // 6 px, all shared
  comp[0].insert(box_mask(5, 0, {0, 3, 0}, {1, 4, 2})); // 2 px, disjoint
  // Only the shared one matters: J = 6 / 10.
  EXPECT_DOUBLE_EQ(seg(ref, comp), 0.6);

  auto comp2 = frames_of(1);
  // |S| = 8 with 6 shared: J = 6 / 12.
  comp2[0].insert(InstanceMask::from_voxels(
      4, 0, {{0, 0, 0}, {0, 0, 1}, {0, 0, 2}, {0, 1, 0}, {0, 1, 1}, {0, 1, 2}, {0, 3, 3}, {0, 3, 4}}));
  EXPECT_DOUBLE_EQ(seg(ref, comp2), 0.5);
}

TEST(Seg, IdentityDisjointAndEmpty) {
  TwoNodeFixture f;
  EXPECT_DOUBLE_EQ(seg(f.frames, f.frames), 1.0);
  auto far = frames_of(2);
  far[0].insert(box_mask(1, 0, {0, 10, 10}, {1, 12, 12}));
  EXPECT_DOUBLE_EQ(seg(f.frames, far), 0.0);
  EXPECT_THROW(seg(frames_of(2), frames_of(2)), Error);
}

TEST(Seg, InvariantUnderRelabeling) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    const AogmInstance inst = random_aogm_instance(rng);
    if (inst.ref.empty()) continue;
    const double base = seg(inst.ref_frames, inst.comp_frames);
    std::vector<DetectionSet> relabeled;
    for (const DetectionSet& ds : inst.comp_frames) {
      DetectionSet r(ds.t());
      for (const auto& [label, m] : ds.masks()) r.insert(m.with_label(1000 - label));
      relabeled.push_back(std::move(r));
    }
    ASSERT_DOUBLE_EQ(seg(inst.ref_frames, relabeled), base);
    ASSERT_DOUBLE_EQ(seg(inst.ref_frames, inst.ref_frames), 1.0);
  }
}

TEST(Evaluate, IdentityAndReport) {
  TwoNodeFixture f;
  const EvalReport r = evaluate(f.forest, f.frames, f.forest, f.frames);
  EXPECT_DOUBLE_EQ(r.tra, 1.0);
  EXPECT_DOUBLE_EQ(r.seg, 1.0);
  const nlohmann::json j = report_json(r);
  for (const char* key : {"TRA", "SEG", "AOGM", "AOGM0", "NS", "FN", "FP", "ED", "EA", "EC", "weights.fn", "aogm_edges"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_NE(report_text(r).find("TRA="), std::string::npos);
}

TEST(AogmWeights, RejectNegativeValues) {
  AogmWeights w;
  EXPECT_NO_THROW(w.validate());
  w.ed = -1;
  EXPECT_THROW(w.validate(), Error);
  w = {};
  w.fn = 0;
  EXPECT_THROW(w.validate(), Error);
}
