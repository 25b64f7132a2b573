#include "pipeline.hpp"

#include <lineagetrack/chunked_store.hpp>
#include <lineagetrack/dataset.hpp>
#include <lineagetrack/error.hpp>
#include <lineagetrack/imgproc.hpp>
#include <lineagetrack/oracle_backend.hpp>
#include <lineagetrack/remote_backend.hpp>
#include <lineagetrack/tiff_io.hpp>

#include <algorithm>
#include <fstream>

namespace lineagetrack::cli {

namespace fs = std::filesystem;

std::unique_ptr<PromptableBackend> make_backend(const std::string& spec, double timeout_s) {
  if (spec == "oracle") return std::make_unique<OracleBackend>();
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    RemoteOptions o;
    o.url = spec;
    o.timeout_s = timeout_s;
    return std::make_unique<RemoteBackend>(o);
  }
  throw Error("unknown backend '" + spec + "' (expected oracle or an http:// URL)", "config");
}

std::unique_ptr<FrameSource> open_frames(const fs::path& data) {
  if (fs::exists(data / "raw.zarr")) return std::make_unique<ChunkedVolume>(ChunkedVolume::open(data / "raw.zarr"));
  return std::make_unique<InMemoryFrames>(read_image_sequence(data));
}

DetectionSet select_masks(const DetectionSet& frame, const std::vector<Coord>& points) {
  DetectionSet out(frame.t());
  for (const auto& [label, mask] : frame.masks())
    if (std::any_of(points.begin(), points.end(), [&](const Coord& p) { return mask.contains(p); })) out.insert(mask);
  return out;
}

LinkResult run_link(const LinkRun& run, const PromptableBackend& backend, const ExecutionOptions& exec) {
  const auto frames = open_frames(run.data);
  const fs::path masks_dir = run.masks.empty() ? run.data / "seg" : run.masks;
  std::vector<DetectionSet> detections = read_label_sequence(masks_dir);
  if (static_cast<int>(detections.size()) != frames->n_frames())
    throw IoError(masks_dir.string() + ": " + std::to_string(detections.size()) + " mask frames for " +
                  std::to_string(frames->n_frames()) + " images");
  std::optional<DetectionSet> seeds;
  if (run.seeds) {
    const LabelImage img = read_label_tiff(*run.seeds);
    if (img.shape != frames->shape()) throw IoError(run.seeds->string() + ": seed image shape differs from the frames");
    seeds = imgproc::masks_from_labels(img.labels, img.shape, frames->n_frames() - 1);
  }
  if (run.seed_points) seeds = select_masks(seeds ? *seeds : detections.back(), *run.seed_points);
  LinkResult r = backward_link_pass(*frames, std::move(detections), seeds, backend, run.cfg, exec);
  write_result(run.out, r.forest, r.detections, frames->shape(), frames->ndim());
  return r;
}

std::vector<Seed> read_seeds(const fs::path& path, int ndim) {
  const auto points = read_points(path, 1, ndim);
  std::vector<Seed> seeds;
  for (const Coord& c : points.front()) seeds.push_back({c, std::nullopt});
  if (seeds.empty()) throw Error(path.string() + ": no seeds at frame 0", "config");
  return seeds;
}

namespace {

/// Rescales to [0, 1] so the detection threshold does not depend on bit depth.
Volume unit_range(const Volume& v) {
  Volume out(v.shape(), Dtype::f32, v.ndim(), v.t());
  out.set_spacing(v.spacing());
  const auto src = v.data();
  const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
  const float range = *hi > *lo ? *hi - *lo : 1.0f;
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - *lo) / range;
  return out;
}

} // namespace

ForwardResult run_track3d(const TrackRun& run, const FrameSource& frames, const PromptableBackend& embedder,
                          const PromptableBackend& segmenter, const ExecutionOptions& exec) {
  std::vector<std::vector<Coord>> centers;
  if (run.centers) {
    centers = read_points(*run.centers, frames.n_frames(), frames.ndim());
  } else {
    centers.resize(static_cast<std::size_t>(frames.n_frames()));
    for (int t = 1; t < frames.n_frames(); ++t) {
      Volume v = unit_range(frames.read_frame(t));
      centers[static_cast<std::size_t>(t)] = detect_centers(v, run.detect.min_sigma, run.detect.max_sigma, run.detect.threshold);
    }
  }
  ForwardResult r = forward_track_pass(frames, centers, run.seeds, embedder, segmenter, run.cfg, exec);
  write_result(run.out, r.forest, r.masks, frames.shape(), frames.ndim());
  write_points(run.out / "centers_used.txt", r.used_centers, frames.ndim());
  return r;
}

nlohmann::json link_config_json(const LinkConfig& c) {
  return {{"d", c.d},
          {"theta_link", c.theta_link},
          {"theta_small", c.theta_small},
          {"theta_conflict", c.theta_conflict},
          {"n_pos", c.n_pos},
          {"n_neg", c.n_neg},
          {"retry_on_patch_border", c.retry_on_patch_border}};
}

nlohmann::json tracker_config_json(const TrackerConfig& c) {
  return {{"tau", c.tau},         {"s_link", c.s_link},     {"delta_mitosis", c.delta_mitosis},
          {"d", c.d},             {"z_weight", c.z_weight}, {"link", link_config_json(c.link)}};
}

void write_manifest(const fs::path& out, const std::string& mode, const nlohmann::json& config, const std::string& name) {
  fs::create_directories(out);
  const nlohmann::json m = {{"tool", "lineagetrack"},
                            {"version", LINEAGETRACK_VERSION},
                            {"mode", mode},
                            {"chunked_store_version", kChunkedStoreVersion},
                            {"config", config}};
  std::ofstream f(out / name, std::ios::binary);
  f << m.dump(2) << "\n";
  if (!f) throw IoError("cannot write " + (out / name).string());
}

} // namespace lineagetrack::cli
