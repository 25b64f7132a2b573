#pragma once

#include <lineagetrack/mask.hpp>
#include <lineagetrack/volume.hpp>

#include <vector>

namespace lineagetrack {

/// Geometric hints for a promptable segmenter, in patch coordinates.
/// `box` is half-open; points carry z = 0 for planar patches.
struct PromptSet {
  Box box;
  std::vector<Coord> positive;
  std::vector<Coord> negative;

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

/// Embedding of a (patch, mask) pair.
struct MemoryFeature {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const MemoryFeature&, const MemoryFeature&) = default;
};

struct Capabilities {
  bool propagate = false;
  bool embed = false;
  bool segment3d = false;
};

struct EmbedResult {
  InstanceMask mask;
  MemoryFeature feature;
};

struct Segment3dResult {
  InstanceMask mask;
  /// Set when the click did not land on a cell; `mask` is then empty.
  bool empty = false;
};

/// Promptable segmentation model. Every call is a pure function of its
/// arguments; implementations must tolerate concurrent calls. Masks are
/// returned in patch coordinates with label 1.
class PromptableBackend {
public:
  virtual ~PromptableBackend() = default;

  virtual Capabilities capabilities() const = 0;

  /// Segments in `target` the object that `prompts` mark in `reference`.
  virtual InstanceMask propagate(const Volume& reference, const Volume& target, const PromptSet& prompts) const = 0;

  /// Predicts a mask under `box` and returns its memory feature.
  virtual EmbedResult embed(const Volume& patch, const Box& box) const = 0;

  /// Volumetric mask of the object under a single click.
  virtual Segment3dResult segment3d(const Volume& patch, const Coord& click) const = 0;
};

/// Throws BackendError("malformed prompts") unless the box is non-degenerate
/// and everything lies inside a planar patch of `shape`.
void validate_prompts(const PromptSet& prompts, const Shape& shape);

} // namespace lineagetrack
