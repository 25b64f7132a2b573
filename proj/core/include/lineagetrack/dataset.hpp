#pragma once

#include <lineagetrack/frame_source.hpp>
#include <lineagetrack/lineage.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace lineagetrack {

/// "<prefix><t>.tif" with t zero-padded to three digits (four past 999).
std::string frame_file_name(const std::string& prefix, int t);

/// Number of consecutive files prefix000.tif, prefix001.tif, ... in `dir`.
/// Throws if a later index exists after a gap.
int count_frames(const std::filesystem::path& dir, const std::string& prefix);

/// Label images in `dir` as per-frame detection sets. All frames must share
/// shape and dimensionality; errors name the offending file.
std::vector<DetectionSet> read_label_sequence(const std::filesystem::path& dir, const std::string& prefix = "mask");
void write_label_sequence(const std::filesystem::path& dir, const std::vector<DetectionSet>& frames, const Shape& shape,
                          int ndim, const std::string& prefix = "mask");

/// Raw image sequence held in memory.
InMemoryFrames read_image_sequence(const std::filesystem::path& dir, const std::string& prefix = "t");
void write_image_sequence(const std::filesystem::path& dir, const std::vector<Volume>& frames, const std::string& prefix = "t");

/// One "L B E P" row of a track table.
struct TrackRecord {
  int label = 0;
  int begin = 0;
  int end = 0;
  int parent = 0;

  friend bool operator==(const TrackRecord&, const TrackRecord&) = default;
};

/// Throws with the line number on malformed rows, duplicate labels, B > E, or
/// a parent that names no row.
std::vector<TrackRecord> read_track_table(const std::filesystem::path& path);
std::vector<TrackRecord> parse_track_table(const std::string& text);

/// Rows sorted by L. Tracklet ids serve as labels.
std::vector<TrackRecord> track_records(const LineageForest& forest);
std::string format_track_table(const std::vector<TrackRecord>& records);
void write_track_table(const std::filesystem::path& path, const LineageForest& forest);

/// Forest whose tracklet L references label L in every frame of its span
/// where that label is present.
LineageForest forest_from_track_table(const std::vector<TrackRecord>& records, const std::vector<DetectionSet>& frames);

/// Points file: one "t z y x" (3D) or "t y x" (2D) line per point; blank lines
/// and '#' comments are skipped. Returns one list per frame.
std::vector<std::vector<Coord>> read_points(const std::filesystem::path& path, int n_frames, int ndim);
void write_points(const std::filesystem::path& path, const std::vector<std::vector<Coord>>& points, int ndim);

/// Writes `forest` with matching masks (label = tracklet id) into `dir` as
/// mask###.tif plus res_track.txt.
void write_result(const std::filesystem::path& dir, LineageForest forest, std::vector<DetectionSet> frames, const Shape& shape,
                  int ndim);

struct LoadedResult {
  LineageForest forest;
  std::vector<DetectionSet> frames;
};

/// Reads mask###.tif plus a track table from `dir` (res_track.txt or man_track.txt).
LoadedResult read_result(const std::filesystem::path& dir);

} // namespace lineagetrack
