#pragma once

#include <lineagetrack/backend.hpp>
#include <lineagetrack/frame_source.hpp>
#include <lineagetrack/lineage.hpp>
#include <lineagetrack/linking.hpp>
#include <lineagetrack/parallel.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace lineagetrack {

struct TrackerConfig {
  /// Candidate search radius in in-plane pixels; 0 selects 2 x median seed diameter.
  double tau = 0.0;
  double s_link = 0.8;
  /// Maximum top-2 similarity gap that still counts as a division.
  double delta_mitosis = 0.1;
  /// Embedding patch side; 0 selects the linking default from the seed masks.
  int d = 0;
  /// Weight applied to z offsets in candidate distances; 0 selects spacing.y / spacing.z.
  double z_weight = 0.0;
  /// Rules for missing-cell recovery.
  LinkConfig link;

  void validate() const;
};

struct Seed {
  Coord center;
  std::optional<InstanceMask> mask;
};

struct LinkDecision {
  enum class Kind { link, divide, missing };
  Kind kind = Kind::missing;
  std::size_t first = 0;
  std::size_t second = 0;

  static LinkDecision link(std::size_t i) { return {Kind::link, i, 0}; }
  static LinkDecision divide(std::size_t i, std::size_t j) { return {Kind::divide, i, j}; }
  static LinkDecision missing() { return {}; }

  friend bool operator==(const LinkDecision&, const LinkDecision&) = default;
};

struct Candidate {
  std::size_t index = 0; ///< position in the searched center list
  Coord center;
  double distance = 0.0;
};

/// Centers within `tau` (inclusive), nearest first, ties by (z, y, x).
std::vector<Candidate> find_candidates(const Coord& center, const std::vector<Coord>& centers_next, double tau,
                                       double z_weight = 1.0);

/// Throws on dimension mismatch or a zero vector.
double cosine_similarity(const MemoryFeature& u, const MemoryFeature& v);

/// Embeds the tracked patch under `tracked_box`, then each candidate patch
/// under the same box, and returns the cosine similarity of each candidate to
/// the tracked embedding. Patches are centred on their cells, so the shared box
/// is centred on each candidate.
std::vector<double> score_candidates(const PromptableBackend& backend, const Volume& tracked_patch, const Box& tracked_box,
                                     const std::vector<Volume>& candidate_patches);

/// Link when the best score reaches s_link (ties to the lower index); else
/// Divide over the top two when their gap is below delta_mitosis; else Missing.
LinkDecision decide_link(const std::vector<double>& scores, const TrackerConfig& cfg);

/// One lineage's scored candidates. `centers` are indices into the next
/// frame's center list, aligned with `scores`.
struct ClaimProposal {
  int lineage = 0;
  std::vector<std::size_t> centers;
  std::vector<double> scores;
};

struct ClaimResolution {
  /// Final decision per lineage; indices refer to positions in that
  /// lineage's `centers`.
  std::map<int, LinkDecision> decisions;
  int rounds = 0;
};

/// Lets every center be claimed by at most one lineage. Each contested center
/// goes to the highest score, ties to the lower lineage id; losers drop it and
/// decide again over what is left. The result depends only on the set of
/// proposals, not their order.
ClaimResolution resolve_claims(const std::vector<ClaimProposal>& proposals, const TrackerConfig& cfg);

struct RecoveredCell {
  Coord center;
  InstanceMask mask; ///< prediction in frame t + 1, global coordinates
};

/// Forward propagation of a lineage whose candidates all failed. Accepted only
/// when the prediction passes the recovery rules against the masks already
/// committed at t + 1.
std::optional<RecoveredCell> recover_missing(const FrameSource& frames, int t, const InstanceMask& tracked,
                                             const DetectionSet& committed_next, const PromptableBackend& backend,
                                             const TrackerConfig& cfg, int d, std::uint64_t seed);

struct ForwardStats {
  std::size_t links = 0;
  std::size_t divisions = 0;
  std::size_t recovered = 0;
  std::size_t terminated = 0;
  std::size_t discarded_centers = 0;
};

struct ForwardResult {
  LineageForest forest;
  std::vector<DetectionSet> masks;
  /// Centers that ended up in a lineage, per frame: detector centers plus recovered ones.
  std::vector<std::vector<Coord>> used_centers;
  ForwardStats stats;
};

/// Seed-based forward tracking. `embedder` scores candidates and recovers
/// missing cells; `segmenter` turns each accepted center into a mask.
ForwardResult forward_track_pass(const FrameSource& frames, const std::vector<std::vector<Coord>>& centers,
                                 const std::vector<Seed>& seeds, const PromptableBackend& embedder,
                                 const PromptableBackend& segmenter, TrackerConfig cfg, const ExecutionOptions& exec = {});

/// Scale-space blob detector: maxima of the normalised negative LoG over
/// sigmas in [min_sigma, max_sigma] above `threshold`, greedily deduplicated
/// within min_sigma (strongest first). Sorted by (z, y, x).
std::vector<Coord> detect_centers(const Volume& volume, double min_sigma, double max_sigma, double threshold,
                                  int n_scales = 5);

} // namespace lineagetrack
