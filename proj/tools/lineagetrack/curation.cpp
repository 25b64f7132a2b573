#include "curation.hpp"

#include "pipeline.hpp"
#include "png.hpp"

#include <lineagetrack/dataset.hpp>
#include <lineagetrack/error.hpp>
#include <lineagetrack/imgproc.hpp>
#include <lineagetrack/tiff_io.hpp>
#include <lineagetrack/wire.hpp>

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace lineagetrack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

HttpReply json_reply(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return json_reply(status, wire::error_body(code, message));
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    const std::size_t j = path.find('/', i);
    const std::size_t end = j == std::string::npos ? path.size() : j;
    if (end > i) parts.push_back(path.substr(i, end - i));
    i = end + 1;
  }
  return parts;
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

int json_int(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) throw Error(std::string("'") + key + "' must be an integer", "bad_request");
  return it->get<int>();
}

/// Distinct colour per id; hue steps by the golden angle.
std::array<std::uint8_t, 3> colour(int id) {
  const double h = std::fmod(id * 0.618033988749895, 1.0) * 6.0;
  const double f = h - std::floor(h);
  const double v = 0.95, s = 0.75;
  const double p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h) % 6) {
  case 0: r = v, g = u, b = p; break;
  case 1: r = q, g = v, b = p; break;
  case 2: r = p, g = v, b = u; break;
  case 3: r = p, g = q, b = v; break;
  case 4: r = u, g = p, b = v; break;
  default: r = v, g = p, b = q; break;
  }
  auto byte = [](double c) { return static_cast<std::uint8_t>(std::lround(c * 255)); };
  return {byte(r), byte(g), byte(b)};
}

void apply_overrides(const json& config, TrackerConfig& tracker, LinkConfig& link, int& workers, std::uint64_t& seed) {
  if (!config.is_object()) throw Error("'config' must be an object", "bad_request");
  for (const auto& [key, value] : config.items()) {
    auto number = [&] {
      if (!value.is_number()) throw Error("'" + key + "' must be a number", "bad_request");
      return value.get<double>();
    };
    auto integer = [&] {
      if (!value.is_number_integer()) throw Error("'" + key + "' must be an integer", "bad_request");
      return value.get<long long>();
    };
    if (key == "tau") tracker.tau = number();
    else if (key == "s_link") tracker.s_link = number();
    else if (key == "delta_mitosis") tracker.delta_mitosis = number();
    else if (key == "z_weight") tracker.z_weight = number();
    else if (key == "d") tracker.d = link.d = static_cast<int>(integer());
    else if (key == "theta_link") tracker.link.theta_link = link.theta_link = number();
    else if (key == "theta_small") tracker.link.theta_small = link.theta_small = number();
    else if (key == "theta_conflict") tracker.link.theta_conflict = link.theta_conflict = number();
    else if (key == "n_pos") tracker.link.n_pos = link.n_pos = static_cast<int>(integer());
    else if (key == "n_neg") tracker.link.n_neg = link.n_neg = static_cast<int>(integer());
    else if (key == "workers") workers = static_cast<int>(integer());
    else if (key == "seed") seed = static_cast<std::uint64_t>(integer());
    else throw Error("unknown config key '" + key + "'", "bad_request");
  }
  if (workers < 1) throw Error("workers must be >= 1", "bad_request");
  tracker.validate();
  link.validate();
}

} // namespace

CurationService::CurationService(CurationOptions options) : options_(std::move(options)) {
  frames_ = open_frames(options_.data);
  std::vector<Coord> initial;
  int initial_t = 0;
  const int ndim = frames_->ndim();
  const int last = frames_->n_frames() - 1;
  const fs::path last_masks = options_.data / "seg" / frame_file_name("mask", last);
  if (ndim == 2 && fs::exists(last_masks)) {
    // 2D data defaults to backward linking, which starts from the final frame.
    const LabelImage img = read_label_tiff(last_masks);
    const DetectionSet final_masks = imgproc::masks_from_labels(img.labels, img.shape, last);
    for (const auto& [label, mask] : final_masks.masks()) {
      const Coord c = mask.centroid().rounded();
      initial.push_back(mask.contains(c) ? c : mask.voxels().front());
    }
    initial_t = last;
  } else if (fs::exists(options_.data / "seeds.txt")) {
    initial = read_points(options_.data / "seeds.txt", frames_->n_frames(), ndim).front();
  } else if (fs::exists(options_.data / "centers.txt")) {
    initial = read_points(options_.data / "centers.txt", frames_->n_frames(), ndim).front();
  }
  int id = 0;
  for (const Coord& c : initial) seeds_.push_back({++id, initial_t, c, true});
}

CurationService::~CurationService() { wait(); }

void CurationService::wait() {
  std::jthread w;
  {
    std::lock_guard lock(mutex_);
    w = std::move(worker_);
  }
  if (w.joinable()) w.join();
}

HttpReply CurationService::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    const auto parts = split_path(path);
    if (parts.size() < 2 || parts[0] != "api") return error_reply(404, "not_found", "no route " + path);
    const bool get = method == "GET";
    if (parts.size() == 2 && parts[1] == "seeds") {
      if (get) return get_seeds();
      if (method == "PUT") return put_seeds(body);
    } else if (parts.size() == 2 && parts[1] == "lineage") {
      if (get) return lineage();
    } else if (parts.size() == 3 && parts[1] == "track" && parts[2] == "start") {
      if (method == "POST") return start(body);
    } else if (parts.size() == 3 && parts[1] == "track" && parts[2] == "status") {
      if (get) return status();
    } else if (parts.size() == 4 && parts[1] == "frames" && (parts[3] == "projection" || parts[3] == "overlay")) {
      if (get) {
        const auto t = parse_int(parts[2]);
        if (!t) return error_reply(400, "bad_request", "frame index must be an integer");
        if (*t < 0 || *t >= frames_->n_frames()) return error_reply(404, "not_found", "no frame " + parts[2]);
        return parts[3] == "projection" ? projection(*t) : overlay(*t);
      }
    } else {
      return error_reply(404, "not_found", "no route " + path);
    }
    return error_reply(405, "method_not_allowed", method + " not allowed on " + path);
  } catch (const Error& e) {
    const bool client = e.code() == "bad_request" || e.code() == "config";
    return error_reply(client ? 400 : 500, client ? "bad_request" : e.code(), e.what());
  } catch (const json::exception& e) {
    return error_reply(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

json CurationService::seeds_json(const std::vector<SeedPoint>& seeds) const {
  json out = json::array();
  for (const SeedPoint& s : seeds) {
    json j = {{"id", s.id}, {"t", s.t}, {"y", s.at.y}, {"x", s.at.x}, {"selected", s.selected}};
    if (frames_->ndim() == 3) j["z"] = s.at.z;
    out.push_back(std::move(j));
  }
  return out;
}

HttpReply CurationService::get_seeds() const {
  std::lock_guard lock(mutex_);
  return json_reply(200, seeds_json(seeds_));
}

HttpReply CurationService::put_seeds(const std::string& body) {
  const json j = json::parse(body);
  if (!j.is_array()) throw Error("seed list must be a JSON array", "bad_request");
  const Shape shape = frames_->shape();
  const bool is3d = frames_->ndim() == 3;
  std::vector<SeedPoint> seeds;
  std::set<int> ids;
  for (const json& e : j) {
    if (!e.is_object()) throw Error("each seed must be an object", "bad_request");
    SeedPoint s;
    s.id = json_int(e, "id");
    if (s.id < 1 || !ids.insert(s.id).second) throw Error("seed ids must be positive and unique", "bad_request");
    s.t = json_int(e, "t");
    if (s.t < 0 || s.t >= frames_->n_frames()) throw Error("seed " + std::to_string(s.id) + ": frame out of range", "bad_request");
    s.at.y = json_int(e, "y");
    s.at.x = json_int(e, "x");
    if (is3d) s.at.z = json_int(e, "z");
    else if (e.contains("z") && json_int(e, "z") != 0) throw Error("2D seeds take no z", "bad_request");
    if (!shape.contains(s.at)) throw Error("seed " + std::to_string(s.id) + ": outside the frame", "bad_request");
    if (e.contains("selected")) {
      if (!e["selected"].is_boolean()) throw Error("'selected' must be a boolean", "bad_request");
      s.selected = e["selected"].get<bool>();
    }
    seeds.push_back(s);
  }
  std::lock_guard lock(mutex_);
  seeds_ = std::move(seeds);
  return json_reply(200, seeds_json(seeds_));
}

HttpReply CurationService::start(const std::string& body) {
  const json req = body.empty() ? json::object() : json::parse(body);
  if (!req.is_object()) throw Error("request must be a JSON object", "bad_request");
  const std::string mode = req.value("mode", frames_->ndim() == 3 ? "track3d" : "link");
  if (mode != "track3d" && mode != "link") throw Error("mode must be track3d or link", "bad_request");

  TrackerConfig tracker = options_.tracker;
  LinkConfig link = options_.link;
  int workers = options_.workers;
  std::uint64_t seed = options_.seed;
  if (req.contains("config")) apply_overrides(req["config"], tracker, link, workers, seed);

  std::unique_lock lock(mutex_);
  if (state_ == "running") return error_reply(409, "busy", "a run is already in progress");
  std::vector<SeedPoint> selected;
  for (const SeedPoint& s : seeds_)
    if (s.selected) selected.push_back(s);
  if (selected.empty()) throw Error("no selected seeds", "bad_request");
  const int want_t = mode == "track3d" ? 0 : frames_->n_frames() - 1;
  for (const SeedPoint& s : selected)
    if (s.t != want_t)
      throw Error(mode + " seeds must lie in frame " + std::to_string(want_t) + " (seed " + std::to_string(s.id) + ")",
                  "bad_request");

  const int run = ++run_;
  json config = {{"backend", options_.backend},
                 {"workers", workers},
                 {"seed", seed},
                 {"seeds", seeds_json(selected)}};
  config[mode == "track3d" ? "tracker" : "link"] = mode == "track3d" ? tracker_config_json(tracker) : link_config_json(link);
  const fs::path out = options_.out / ("run-" + std::to_string(run));

  std::jthread previous = std::move(worker_);
  state_ = "running";
  error_.clear();
  frame_ = 0;
  n_active_ = 0;
  lock.unlock();
  if (previous.joinable()) previous.join();

  std::vector<Coord> points;
  for (const SeedPoint& s : selected) points.push_back(s.at);
  lock.lock();
  worker_ = std::jthread([this, mode, tracker, link, workers, seed, points, out, config] {
    try {
      write_manifest(out, mode, config);
      ExecutionOptions exec;
      exec.workers = workers;
      exec.seed = seed;
      exec.progress = [this](int t, std::size_t active) {
        std::lock_guard g(mutex_);
        frame_ = t;
        n_active_ = active;
      };
      const auto backend = make_backend(options_.backend);
      LineageForest forest;
      std::vector<DetectionSet> masks;
      if (mode == "track3d") {
        TrackRun r;
        r.data = options_.data;
        if (fs::exists(options_.data / "centers.txt")) r.centers = options_.data / "centers.txt";
        for (const Coord& c : points) r.seeds.push_back({c, std::nullopt});
        r.out = out;
        r.cfg = tracker;
        ForwardResult res = run_track3d(r, *frames_, *backend, *backend, exec);
        forest = std::move(res.forest);
        masks = std::move(res.masks);
      } else {
        LinkRun r;
        r.data = options_.data;
        r.seed_points = points;
        r.out = out;
        r.cfg = link;
        LinkResult res = run_link(r, *backend, exec);
        forest = std::move(res.forest);
        masks = std::move(res.detections);
      }
      relabel_by_tracklet(forest, masks);
      std::lock_guard g(mutex_);
      forest_ = std::move(forest);
      masks_ = std::move(masks);
      state_ = "done";
    } catch (const std::exception& e) {
      std::lock_guard g(mutex_);
      state_ = "failed";
      error_ = e.what();
    }
  });
  return json_reply(202, {{"run", run}, {"mode", mode}, {"config", config}});
}

HttpReply CurationService::status() const {
  std::lock_guard lock(mutex_);
  json j = {{"state", state_}, {"frame", frame_}, {"n_active", n_active_}, {"run", run_}};
  if (!error_.empty()) j["error"] = error_;
  return json_reply(200, j);
}

HttpReply CurationService::lineage() const {
  std::lock_guard lock(mutex_);
  json tracklets = json::array();
  if (forest_)
    for (const auto& [id, tr] : forest_->tracklets())
      tracklets.push_back({{"id", id},
                           {"t_start", tr.t_start},
                           {"t_end", tr.t_end},
                           {"parent", tr.parent ? json(*tr.parent) : json(nullptr)}});
  return json_reply(200, {{"tracklets", tracklets}});
}

HttpReply CurationService::projection(int t) const {
  const Volume proj = frames_->read_frame(t).max_projection();
  const auto data = proj.data();
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  const float range = *hi > *lo ? *hi - *lo : 1.0f;
  std::vector<std::uint8_t> pixels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) pixels[i] = static_cast<std::uint8_t>(std::lround((data[i] - *lo) / range * 255.0f));
  return {200, "image/png", encode_png_gray(proj.shape().x, proj.shape().y, pixels)};
}

HttpReply CurationService::overlay(int t) const {
  std::lock_guard lock(mutex_);
  if (!forest_) return error_reply(404, "not_found", "no tracking result yet");
  const Shape s = frames_->shape();
  const auto plane = static_cast<std::size_t>(s.y) * s.x;
  std::vector<std::uint8_t> pixels(plane * 4, 0);
  // Per (y, x), the label nearest to z = 0 wins.
  std::vector<int> owner(plane, 0), owner_z(plane, s.z);
  for (const auto& [label, mask] : masks_.at(static_cast<std::size_t>(t)).masks())
    for (const Run& r : mask.runs())
      for (int x = r.x0; x < r.x_end(); ++x) {
        const std::size_t i = static_cast<std::size_t>(r.y) * s.x + x;
        if (r.z < owner_z[i]) {
          owner[i] = label;
          owner_z[i] = r.z;
        }
      }
  for (std::size_t i = 0; i < plane; ++i) {
    if (owner[i] == 0) continue;
    const auto c = colour(owner[i]);
    pixels[4 * i] = c[0];
    pixels[4 * i + 1] = c[1];
    pixels[4 * i + 2] = c[2];
    pixels[4 * i + 3] = 160;
  }
  return {200, "image/png", encode_png_rgba(s.x, s.y, pixels)};
}

void serve_curation(CurationService& service, const std::string& host, int port) {
  httplib::Server server;
  auto bind = [&service](const httplib::Request& req, httplib::Response& res) {
    const HttpReply r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get(".*", bind);
  server.Put(".*", bind);
  server.Post(".*", bind);
  if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port), "io");
}

} // namespace lineagetrack::cli
