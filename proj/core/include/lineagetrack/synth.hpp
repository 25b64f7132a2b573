#pragma once

#include <lineagetrack/lineage.hpp>
#include <lineagetrack/volume.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lineagetrack {

/// Ground-truth tracklet `track` ends at t - 1; its two daughters start at t.
struct SynthDivision {
  int track = 0;
  int t = 0;
};

struct SynthScenario {
  std::string name = "custom";
  Shape shape{1, 64, 64};
  int ndim = 2;
  int n_frames = 10;
  int n_cells = 1;
  std::vector<SynthDivision> divisions;
  /// In-plane cell radius and, for 3D, the z radius (pixels).
  double radius = 5.0;
  double z_radius = 2.5;
  /// Standard deviation of the per-frame in-plane step; z steps scale by z_radius / radius.
  double motion_sigma = 1.0;
  double background = 100.0;
  /// Peak height above background; each cell draws a factor in [1 - jitter, 1 + jitter].
  double intensity = 1000.0;
  double intensity_jitter = 0.2;
  double noise_sigma = 20.0;
  /// Width of the soft cell edge (pixels).
  double edge_width = 1.0;
  /// Minimum free space between cell boundaries (pixels).
  double min_gap = 2.0;
  /// Share of ground-truth masks (last frame excluded) removed from the detections.
  double drop_mask_fraction = 0.0;
  /// Per frame from t = 1: share of centers removed, and share added in the background.
  double dropped_center_fraction = 0.0;
  double spurious_center_fraction = 0.0;
  Spacing spacing;
  std::uint64_t seed = 1;

  void validate() const;
};

/// "tiny2d", "easy2d" or "embryo3d".
SynthScenario synth_preset(const std::string& name);
std::vector<std::string> synth_preset_names();

nlohmann::json scenario_json(const SynthScenario& s);

struct SynthData {
  std::vector<Volume> frames;               ///< u16
  std::vector<DetectionSet> gt;             ///< labels are ground-truth tracklet ids
  LineageForest gt_forest;
  std::vector<DetectionSet> detections;     ///< gt minus dropped masks, labels renumbered per frame
  std::vector<std::vector<Coord>> true_centers;
  std::vector<std::vector<Coord>> centers;  ///< detector output: true minus dropped plus spurious
  std::vector<std::vector<Coord>> spurious;
};

/// Deterministic in the scenario (including its seed). Cells are soft-edged
/// disks (2D) or ellipsoids (3D) on a noisy background, moving by a random
/// walk that keeps them apart and inside the image. A division replaces a
/// cell by two daughters with half its integrated intensity, offset on
/// either side along a random in-plane axis; daughters regrow over three
/// frames.
SynthData synth_generate(const SynthScenario& s);

/// Writes t###.tif, seg/, gt/ (with man_track.txt), centers.txt, seeds.txt,
/// spurious.txt, scenario.json and, for 3D, raw.zarr.
void write_synth(const std::filesystem::path& dir, const SynthScenario& s, const SynthData& d);

} // namespace lineagetrack
