#include <lineagetrack/dataset.hpp>

#include <lineagetrack/error.hpp>
#include <lineagetrack/imgproc.hpp>
#include <lineagetrack/tiff_io.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lineagetrack {

namespace fs = std::filesystem;

std::string frame_file_name(const std::string& prefix, int t) {
  std::string digits = std::to_string(t);
  const std::size_t width = t > 999 ? 4 : 3;
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits + ".tif";
}

int count_frames(const fs::path& dir, const std::string& prefix) {
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  int n = 0;
  while (fs::exists(dir / frame_file_name(prefix, n))) ++n;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= prefix.size() + 4 || name.rfind(prefix, 0) != 0 || entry.path().extension() != ".tif") continue;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 4);
    int t = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), t);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) continue;
    if (t >= n) throw IoError("frame " + name + " follows a gap at index " + std::to_string(n));
  }
  return n;
}

std::vector<DetectionSet> read_label_sequence(const fs::path& dir, const std::string& prefix) {
  const int n = count_frames(dir, prefix);
  std::vector<DetectionSet> frames;
  Shape shape;
  int ndim = 0;
  for (int t = 0; t < n; ++t) {
    const fs::path file = dir / frame_file_name(prefix, t);
    const LabelImage img = read_label_tiff(file);
    if (t == 0) {
      shape = img.shape;
      ndim = img.ndim;
    } else if (img.shape != shape || img.ndim != ndim) {
      throw IoError(file.string() + ": frame shape differs from frame 0");
    }
    frames.push_back(imgproc::masks_from_labels(img.labels, img.shape, t));
  }
  return frames;
}

void write_label_sequence(const fs::path& dir, const std::vector<DetectionSet>& frames, const Shape& shape, int ndim,
                          const std::string& prefix) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    LabelImage img{shape, ndim, imgproc::labels_from_masks(frames[t], shape)};
    write_label_tiff(dir / frame_file_name(prefix, static_cast<int>(t)), img);
  }
}

InMemoryFrames read_image_sequence(const fs::path& dir, const std::string& prefix) {
  const int n = count_frames(dir, prefix);
  if (n == 0) throw IoError("no images " + prefix + "000.tif in " + dir.string());
  std::vector<Volume> frames;
  for (int t = 0; t < n; ++t) {
    const fs::path file = dir / frame_file_name(prefix, t);
    Volume v = read_tiff(file);
    if (!frames.empty() && (v.shape() != frames.front().shape() || v.dtype() != frames.front().dtype()))
      throw IoError(file.string() + ": shape or dtype differs from frame 0");
    frames.push_back(std::move(v));
  }
  return InMemoryFrames(std::move(frames));
}

void write_image_sequence(const fs::path& dir, const std::vector<Volume>& frames, const std::string& prefix) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < frames.size(); ++t) write_tiff(dir / frame_file_name(prefix, static_cast<int>(t)), frames[t]);
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Integers on one line, or nullopt if any token is not an integer.
std::optional<std::vector<long long>> integers(const std::string& line) {
  std::vector<long long> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) return std::nullopt;
    out.push_back(v);
  }
  return out;
}

std::string strip_comment(std::string line) {
  if (const auto p = line.find('#'); p != std::string::npos) line.erase(p);
  return line;
}

} // namespace

std::vector<TrackRecord> parse_track_table(const std::string& text) {
  std::vector<TrackRecord> rows;
  std::map<int, int> line_of;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const auto vals = integers(line);
    if (vals && vals->empty()) continue;
    if (!vals || vals->size() != 4)
      throw IoError("track table line " + std::to_string(no) + ": expected four integers \"L B E P\"");
    const auto& v = *vals;
    TrackRecord r{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]), static_cast<int>(v[3])};
    if (r.label <= 0 || r.begin < 0 || r.parent < 0)
      throw IoError("track table line " + std::to_string(no) + ": labels must be positive and frames non-negative");
    if (r.begin > r.end) throw IoError("track table line " + std::to_string(no) + ": begin after end");
    if (!line_of.emplace(r.label, no).second)
      throw IoError("track table line " + std::to_string(no) + ": duplicate label " + std::to_string(r.label));
    rows.push_back(r);
  }
  for (const TrackRecord& r : rows)
    if (r.parent != 0 && !line_of.count(r.parent))
      throw IoError("track table line " + std::to_string(line_of[r.label]) + ": unknown parent " + std::to_string(r.parent));
  return rows;
}

std::vector<TrackRecord> read_track_table(const fs::path& path) { return parse_track_table(read_text(path)); }

std::vector<TrackRecord> track_records(const LineageForest& forest) {
  std::vector<TrackRecord> rows;
  for (const auto& [id, tr] : forest.tracklets()) rows.push_back({id, tr.t_start, tr.t_end, tr.parent.value_or(0)});
  return rows;
}

std::string format_track_table(const std::vector<TrackRecord>& records) {
  std::vector<TrackRecord> rows = records;
  std::sort(rows.begin(), rows.end(), [](const TrackRecord& a, const TrackRecord& b) { return a.label < b.label; });
  std::ostringstream os;
  for (const TrackRecord& r : rows) os << r.label << ' ' << r.begin << ' ' << r.end << ' ' << r.parent << '\n';
  return os.str();
}

void write_track_table(const fs::path& path, const LineageForest& forest) {
  write_text(path, format_track_table(track_records(forest)));
}

LineageForest forest_from_track_table(const std::vector<TrackRecord>& records, const std::vector<DetectionSet>& frames) {
  LineageForest forest;
  for (const TrackRecord& r : records) {
    Tracklet tr;
    tr.id = r.label;
    tr.t_start = r.begin;
    tr.t_end = r.end;
    if (r.parent != 0) tr.parent = r.parent;
    for (int t = r.begin; t <= r.end && t < static_cast<int>(frames.size()); ++t)
      if (frames[static_cast<std::size_t>(t)].contains(r.label)) tr.refs.push_back({t, r.label});
    forest.put(std::move(tr));
  }
  return forest;
}

std::vector<std::vector<Coord>> read_points(const fs::path& path, int n_frames, int ndim) {
  std::vector<std::vector<Coord>> out(static_cast<std::size_t>(std::max(0, n_frames)));
  std::istringstream is(read_text(path));
  std::string line;
  int no = 0;
  const std::size_t want = ndim == 2 ? 3 : 4;
  while (std::getline(is, line)) {
    ++no;
    const auto vals = integers(strip_comment(line));
    if (vals && vals->empty()) continue;
    if (!vals || vals->size() != want)
      throw IoError(path.string() + " line " + std::to_string(no) + ": expected " + (ndim == 2 ? "\"t y x\"" : "\"t z y x\""));
    const auto& v = *vals;
    const int t = static_cast<int>(v[0]);
    if (t < 0 || t >= n_frames) throw IoError(path.string() + " line " + std::to_string(no) + ": frame out of range");
    const Coord c = ndim == 2 ? Coord{0, static_cast<int>(v[1]), static_cast<int>(v[2])}
                              : Coord{static_cast<int>(v[1]), static_cast<int>(v[2]), static_cast<int>(v[3])};
    out[static_cast<std::size_t>(t)].push_back(c);
  }
  return out;
}

void write_points(const fs::path& path, const std::vector<std::vector<Coord>>& points, int ndim) {
  std::ostringstream os;
  for (std::size_t t = 0; t < points.size(); ++t)
    for (const Coord& c : points[t]) {
      os << t << ' ';
      if (ndim == 3) os << c.z << ' ';
      os << c.y << ' ' << c.x << '\n';
    }
  write_text(path, os.str());
}

void write_result(const fs::path& dir, LineageForest forest, std::vector<DetectionSet> frames, const Shape& shape, int ndim) {
  relabel_by_tracklet(forest, frames);
  write_label_sequence(dir, frames, shape, ndim, "mask");
  write_track_table(dir / "res_track.txt", forest);
}

LoadedResult read_result(const fs::path& dir) {
  LoadedResult r;
  r.frames = read_label_sequence(dir, "mask");
  fs::path table = dir / "res_track.txt";
  if (!fs::exists(table)) table = dir / "man_track.txt";
  if (!fs::exists(table)) throw IoError("no res_track.txt or man_track.txt in " + dir.string());
  r.forest = forest_from_track_table(read_track_table(table), r.frames);
  return r;
}

} // namespace lineagetrack
