#pragma once

#include <lineagetrack/lineage.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lineagetrack {

struct AogmWeights {
  double ns = 5.0;
  double fn = 10.0;
  double fp = 1.0;
  double ed = 1.0;
  double ea = 1.5;
  double ec = 1.0;

  void validate() const;
};

struct AogmCounts {
  std::int64_t ns = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;
  std::int64_t ed = 0;
  std::int64_t ea = 0;
  std::int64_t ec = 0;

  friend bool operator==(const AogmCounts&, const AogmCounts&) = default;
};

struct AogmBreakdown {
  AogmCounts counts;
  double total = 0.0;
  double aogm0 = 0.0;
  /// Edge-error share of the total (ED, EA and EC terms).
  double edges = 0.0;
};

/// A detection matches a reference mask R when it covers more than half of R;
/// this makes each reference mask matched by at most one detection.
struct NodeMatching {
  std::map<MaskRef, std::vector<MaskRef>> comp_to_ref; ///< every comp node, possibly with no refs
  std::map<MaskRef, MaskRef> ref_to_comp;              ///< matched ref nodes only
};

/// Frames must align one to one. Throws on overlapping masks within a frame.
NodeMatching match_nodes(const std::vector<DetectionSet>& ref, const std::vector<DetectionSet>& comp);

/// Graph edit cost of turning the computed lineage graph into the reference.
/// Nodes are the masks of each frame; edges are links between consecutive
/// masks of a tracklet (migration) and from a parent's last mask to a child's
/// first mask (division).
AogmBreakdown aogm(const LineageForest& ref_forest, const std::vector<DetectionSet>& ref_frames,
                   const LineageForest& comp_forest, const std::vector<DetectionSet>& comp_frames,
                   const NodeMatching& matching, const AogmWeights& w = {});

/// 1 - min(AOGM, AOGM0) / AOGM0. Throws on an empty reference.
double tra(const AogmBreakdown& b);

/// Mean Jaccard index over reference masks (0 for unmatched ones). Throws when
/// the reference holds no masks.
double seg(const std::vector<DetectionSet>& ref, const std::vector<DetectionSet>& comp);

struct EvalReport {
  double tra = 0.0;
  double seg = 0.0;
  AogmBreakdown aogm;
  AogmWeights weights;
};

EvalReport evaluate(const LineageForest& ref_forest, const std::vector<DetectionSet>& ref_frames,
                    const LineageForest& comp_forest, const std::vector<DetectionSet>& comp_frames,
                    const AogmWeights& w = {});

/// Flat key=value lines.
std::string report_text(const EvalReport& r);
nlohmann::json report_json(const EvalReport& r);

} // namespace lineagetrack
