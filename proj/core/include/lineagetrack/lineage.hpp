#pragma once

#include <lineagetrack/mask.hpp>

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lineagetrack {

/// Per-frame mask set M_t. Masks are pairwise voxel-disjoint.
class DetectionSet {
public:
  DetectionSet() = default;
  explicit DetectionSet(int t) : t_(t) {}

  int t() const { return t_; }
  const std::map<int, InstanceMask>& masks() const { return masks_; }
  std::size_t size() const { return masks_.size(); }
  bool empty() const { return masks_.empty(); }
  int next_label() const { return next_label_; }

  bool contains(int label) const { return masks_.count(label) != 0; }
  const InstanceMask& at(int label) const;

  /// Inserts under the mask's own label. Throws on duplicate labels, empty
  /// masks or voxel overlap with an existing mask.
  void insert(InstanceMask mask);
  /// Inserts under next_label() and returns the assigned label.
  int insert_fresh(const InstanceMask& mask);
  void erase(int label);

  /// Labels whose mask shares at least one voxel with `m`, ascending.
  std::vector<int> overlapping(const InstanceMask& m) const;

  /// Union of all masks in this frame, labeled 0.
  InstanceMask occupied() const;

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;

private:
  int t_ = 0;
  std::map<int, InstanceMask> masks_;
  int next_label_ = 1;
};

struct MaskRef {
  int t = 0;
  int label = 0;
  friend auto operator<=>(const MaskRef&, const MaskRef&) = default;
};

/// Temporally contiguous run of one cell's masks, L_k.
struct Tracklet {
  int id = 0;
  int t_start = 0;
  int t_end = 0;
  std::vector<MaskRef> refs;
  std::optional<int> parent;

  friend bool operator==(const Tracklet&, const Tracklet&) = default;
};

/// Tracklets plus parent edges.
class LineageForest {
public:
  const std::map<int, Tracklet>& tracklets() const { return tracklets_; }
  std::size_t size() const { return tracklets_.size(); }
  bool empty() const { return tracklets_.empty(); }

  bool contains(int id) const { return tracklets_.count(id) != 0; }
  const Tracklet& at(int id) const;
  /// Inserts or replaces by id.
  void put(Tracklet t) { tracklets_[t.id] = std::move(t); }
  void erase(int id) { tracklets_.erase(id); }

  std::vector<int> children_of(int id) const;
  int max_id() const { return tracklets_.empty() ? 0 : tracklets_.rbegin()->first; }

  friend bool operator==(const LineageForest&, const LineageForest&) = default;

private:
  std::map<int, Tracklet> tracklets_;
};

/// Returns one human-readable line per violated invariant, e.g.
/// "temporal gap: id=3, t=7" or "non-binary division: id=1". Empty when valid.
std::vector<std::string> forest_validate(const LineageForest& forest);

/// forest_validate plus a check that every reference resolves to a mask.
std::vector<std::string> forest_validate(const LineageForest& forest, const std::vector<DetectionSet>& frames);

/// Rewrites mask labels so that each tracklet uses its id as label over its
/// whole span (the CTC export convention). Masks not referenced are dropped.
void relabel_by_tracklet(LineageForest& forest, std::vector<DetectionSet>& frames);

} // namespace lineagetrack
