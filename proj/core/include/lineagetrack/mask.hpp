#pragma once

#include <lineagetrack/geometry.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace lineagetrack {

/// Horizontal run of voxels: (z, y, x0 .. x0 + length - 1).
struct Run {
  int z = 0;
  int y = 0;
  int x0 = 0;
  int length = 0;

  friend auto operator<=>(const Run&, const Run&) = default;
  int x_end() const { return x0 + length; }
};

/// One labeled cell region in one frame, stored as sorted, non-overlapping,
/// maximal runs. Centroid and bounding box are derived at construction and
/// never drift from the voxels.
class InstanceMask {
public:
  InstanceMask() = default;

  static InstanceMask from_voxels(int label, int t, std::vector<Coord> voxels);
  static InstanceMask from_runs(int label, int t, std::vector<Run> runs);

  int label() const { return label_; }
  int t() const { return t_; }
  bool empty() const { return size_ == 0; }
  std::int64_t size() const { return size_; }
  std::span<const Run> runs() const { return runs_; }

  /// Arithmetic mean of voxel coordinates. Undefined for an empty mask.
  const Point3& centroid() const { return centroid_; }
  /// Tight half-open hull of the voxels.
  const Box& bbox() const { return bbox_; }

  bool contains(const Coord& c) const;
  std::vector<Coord> voxels() const;

  std::int64_t slice_area(int z) const;
  /// Distinct z values covered, ascending.
  std::vector<int> slices() const;
  InstanceMask slice(int z) const;

  bool touches_xy_border(const Shape& grid) const;

  InstanceMask with_label(int label) const;
  InstanceMask with_t(int t) const;
  InstanceMask translated(const Coord& offset) const;
  /// Voxels not present in `other`.
  InstanceMask minus(const InstanceMask& other) const;
  /// Voxels restricted to `box`.
  InstanceMask clipped(const Box& box) const;

  friend bool operator==(const InstanceMask& a, const InstanceMask& b) {
    return a.label_ == b.label_ && a.t_ == b.t_ && a.runs_ == b.runs_;
  }

private:
  void finalize();

  int label_ = 0;
  int t_ = 0;
  std::vector<Run> runs_;
  std::int64_t size_ = 0;
  Point3 centroid_{};
  Box bbox_{};
};

struct OverlapStats {
  std::int64_t intersection = 0;
  std::int64_t union_size = 0;
  double iou = 0.0;
  double frac_of_smaller = 0.0;
};

std::int64_t intersection_size(const InstanceMask& a, const InstanceMask& b);
OverlapStats mask_overlap_stats(const InstanceMask& a, const InstanceMask& b);

/// Equivalent diameter in the x-y plane: 2 * sqrt(A / pi) for the largest slice.
double equivalent_diameter(const InstanceMask& m);

} // namespace lineagetrack
