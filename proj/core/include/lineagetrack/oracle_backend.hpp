#pragma once

#include <lineagetrack/backend.hpp>

namespace lineagetrack {

struct OracleOptions {
  /// Share of the squared feature norm given to the coarse patch-layout block;
  /// the rest goes to the in-mask appearance block.
  double context_weight = 0.7;
  int context_grid = 8;
  int histogram_bins = 16;
  /// Watershed markers are the parts of a foreground component whose distance
  /// to background exceeds this fraction of the component maximum.
  double marker_fraction = 0.5;
};

/// Deterministic stand-in for the learned models. Needs no weights:
///  - propagate: Otsu-threshold the target, return the connected component
///    with the largest overlap with the prompt box (empty if none overlaps).
///  - embed: same mask rule under the box; the feature concatenates an
///    in-mask intensity histogram, area, eccentricity and inside/outside
///    statistics with a mean-centred coarse grid of the patch, L2-normalised.
///  - segment3d: thresholded flood fill from the click, split from touching
///    neighbours by a distance-transform watershed.
class OracleBackend final : public PromptableBackend {
public:
  OracleBackend() = default;
  explicit OracleBackend(OracleOptions options) : options_(options) {}

  Capabilities capabilities() const override { return {true, true, true}; }
  InstanceMask propagate(const Volume& reference, const Volume& target, const PromptSet& prompts) const override;
  EmbedResult embed(const Volume& patch, const Box& box) const override;
  Segment3dResult segment3d(const Volume& patch, const Coord& click) const override;

  const OracleOptions& options() const { return options_; }

private:
  OracleOptions options_;
};

} // namespace lineagetrack
