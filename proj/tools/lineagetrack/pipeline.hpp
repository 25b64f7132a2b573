#pragma once

#include <lineagetrack/backend.hpp>
#include <lineagetrack/frame_source.hpp>
#include <lineagetrack/linking.hpp>
#include <lineagetrack/tracker.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lineagetrack::cli {

/// "oracle" or a model-server base URL ("http://host:port").
std::unique_ptr<PromptableBackend> make_backend(const std::string& spec, double timeout_s = 120.0);

/// Raw frames of a dataset directory: raw.zarr when present, else t###.tif.
std::unique_ptr<FrameSource> open_frames(const std::filesystem::path& data);

/// Detections at the final frame that contain at least one of `points`
/// (coordinates in that frame). Points outside every mask are ignored.
DetectionSet select_masks(const DetectionSet& frame, const std::vector<Coord>& points);

struct LinkRun {
  std::filesystem::path data;
  /// Pre-segmented masks; defaults to <data>/seg.
  std::filesystem::path masks;
  /// Label image replacing the final frame's detections.
  std::optional<std::filesystem::path> seeds;
  /// Points in the final frame; only the detections containing one are kept
  /// there. Applied after `seeds`.
  std::optional<std::vector<Coord>> seed_points;
  std::filesystem::path out;
  LinkConfig cfg;
};

LinkResult run_link(const LinkRun& run, const PromptableBackend& backend, const ExecutionOptions& exec);

struct DetectOptions {
  double min_sigma = 2.0;
  double max_sigma = 6.0;
  double threshold = 0.05;
};

struct TrackRun {
  std::filesystem::path data;
  /// Points file with per-frame centers; when absent the centers are detected.
  std::optional<std::filesystem::path> centers;
  std::vector<Seed> seeds;
  DetectOptions detect;
  std::filesystem::path out;
  TrackerConfig cfg;
};

/// Seeds from a points file; every point must lie in frame 0.
std::vector<Seed> read_seeds(const std::filesystem::path& path, int ndim);

ForwardResult run_track3d(const TrackRun& run, const FrameSource& frames, const PromptableBackend& embedder,
                          const PromptableBackend& segmenter, const ExecutionOptions& exec);

nlohmann::json link_config_json(const LinkConfig& c);
nlohmann::json tracker_config_json(const TrackerConfig& c);

/// Writes <out>/<name> with the tool version, mode and resolved configuration.
void write_manifest(const std::filesystem::path& out, const std::string& mode, const nlohmann::json& config,
                    const std::string& name = "manifest.json");

} // namespace lineagetrack::cli
