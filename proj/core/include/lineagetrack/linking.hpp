#pragma once

#include <lineagetrack/backend.hpp>
#include <lineagetrack/frame_source.hpp>
#include <lineagetrack/lineage.hpp>
#include <lineagetrack/parallel.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lineagetrack {

struct LinkConfig {
  /// Patch side in pixels; 0 selects 4 x median seed diameter, rounded up to even.
  int d = 0;
  /// Minimum intersection / min(|pred|, |candidate|) for a link.
  double theta_link = 0.5;
  /// Predictions smaller than this fraction of the source area terminate the track.
  double theta_small = 0.2;
  /// A prediction overlapping any detection with at least this IoU cannot be recovered.
  double theta_conflict = 0.2;
  int n_pos = 3;
  int n_neg = 4;
  /// Re-run a prediction that touches the patch border with a doubled patch.
  bool retry_on_patch_border = true;

  void validate() const;
};

/// Square window of side d around `center` in one z-slice. `origin` is the
/// clamped top-left corner inside the image; `pad_before`/`pad_after` count
/// the zero rows/columns added on each side.
struct PatchSpec {
  Coord center;
  int d = 0;
  Coord origin;
  Coord pad_before;
  Coord pad_after;

  /// Unclamped window in global coordinates.
  Box window() const {
    const Coord lo{center.z, center.y - d / 2, center.x - d / 2};
    return {lo, {center.z + 1, lo.y + d, lo.x + d}};
  }
  Coord to_global(const Coord& p) const { return Coord{center.z, origin.y - pad_before.y + p.y, origin.x - pad_before.x + p.x}; }
  Coord to_patch(const Coord& g) const { return Coord{0, g.y - origin.y + pad_before.y, g.x - origin.x + pad_before.x}; }
  Coord global_offset() const { return to_global({0, 0, 0}); }
};

struct PatchPair {
  Volume current;
  Volume other;
  PatchSpec spec;
};

PatchSpec make_patch_spec(const Shape& image, const Coord& center, int d);

/// Cuts the same d x d window (zero-padded past the border) from both frames.
PatchPair extract_patch_pair(const Volume& v_t, const Volume& v_other, const Coord& center, int d);
PatchPair extract_patch_pair(const FrameSource& frames, int t, int t_other, const Coord& center, int d);

/// z of the largest cross-section; ties go to the smallest z.
int select_reference_slice(const InstanceMask& mask);

/// Box, positive points (centroid first, then interior samples) and negative
/// ring points for a mask, in patch coordinates. Deterministic in `seed`.
PromptSet build_prompts(const InstanceMask& mask, const PatchSpec& spec, const LinkConfig& cfg, std::uint64_t seed);

struct Decision {
  enum class Kind { linked, recovered, terminated };
  Kind kind = Kind::terminated;
  int label = 0;
  std::string reason;

  static Decision linked(int label) { return {Kind::linked, label, {}}; }
  static Decision recovered() { return {Kind::recovered, 0, {}}; }
  static Decision terminated(std::string why) { return {Kind::terminated, 0, std::move(why)}; }
};

/// Classifies a prediction for frame t-1 against that frame's detections.
Decision classify_prediction(const InstanceMask& pred, const InstanceMask& source, const DetectionSet& detections,
                             const Shape& image_shape, const LinkConfig& cfg);

struct MitosisResolution {
  std::vector<std::size_t> retained; ///< indices into the children list, ascending
  std::vector<std::size_t> severed;
};

/// Keeps at most the two children whose centroids are nearest the parent's.
MitosisResolution resolve_mitosis(const InstanceMask& parent, const std::vector<InstanceMask>& children);

/// Median equivalent diameter x 4, rounded up to even, at least 16.
int default_patch_side(const DetectionSet& seeds);

struct PropagationResult {
  InstanceMask pred; ///< global coordinates, t = target frame
  PatchSpec spec;
  bool retried = false;
};

/// Prompted propagation of `source` (frame t_src) into frame t_target: patch
/// pair at the reference slice, prompts, backend call, mapping back to the
/// image grid, and the optional doubled-patch retry.
PropagationResult propagate_mask(const FrameSource& frames, int t_src, int t_target, const InstanceMask& source,
                                 const PromptableBackend& backend, const LinkConfig& cfg, int d, std::uint64_t seed);

struct LinkStats {
  std::size_t linked = 0;
  std::size_t recovered = 0;
  std::size_t terminated = 0;
  std::size_t divisions = 0;
  std::size_t severed = 0;
  std::size_t retries = 0;
};

struct LinkResult {
  LineageForest forest;
  std::vector<DetectionSet> detections; ///< input detections plus recovered masks
  LinkStats stats;
};

/// Backward linking from the last frame to frame 0. `seeds` replaces the
/// detections of the last frame when given.
LinkResult backward_link_pass(const FrameSource& frames, std::vector<DetectionSet> detections,
                              const std::optional<DetectionSet>& seeds, const PromptableBackend& backend,
                              LinkConfig cfg, const ExecutionOptions& exec = {});

} // namespace lineagetrack
