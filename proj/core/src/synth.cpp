#include <lineagetrack/synth.hpp>

#include <lineagetrack/chunked_store.hpp>
#include <lineagetrack/dataset.hpp>
#include <lineagetrack/error.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace lineagetrack {

void SynthScenario::validate() const {
  if (ndim != 2 && ndim != 3) throw Error("synthetic ndim must be 2 or 3", "config");
  if (ndim == 2 && shape.z != 1) throw Error("2D scenario with z > 1", "config");
  if (shape.y < 8 || shape.x < 8 || shape.z < 1) throw Error("synthetic image too small", "config");
  if (n_frames < 1 || n_cells < 1) throw Error("need at least one frame and one cell", "config");
  if (!(radius > 1.0) || (ndim == 3 && !(z_radius > 0.5))) throw Error("cell radii too small", "config");
  if (motion_sigma < 0 || noise_sigma < 0 || !(edge_width > 0) || min_gap < 0) throw Error("negative synthetic parameter", "config");
  for (double f : {drop_mask_fraction, dropped_center_fraction, spurious_center_fraction})
    if (f < 0.0 || f >= 1.0) throw Error("fractions must lie in [0, 1)", "config");
  for (const SynthDivision& d : divisions)
    if (d.t < 1 || d.t > n_frames - 1) throw Error("division at t=" + std::to_string(d.t) + " outside [1, n_frames-1]", "config");
}

SynthScenario synth_preset(const std::string& name) {
  SynthScenario s;
  s.name = name;
  if (name == "tiny2d") {
    s.shape = {1, 48, 48};
    s.n_frames = 8;
    s.n_cells = 2;
    s.divisions = {{1, 4}};
    s.seed = 7;
  } else if (name == "easy2d") {
    s.shape = {1, 64, 64};
    s.n_frames = 30;
    s.n_cells = 5;
    s.divisions = {{1, 10}, {3, 20}};
    s.drop_mask_fraction = 0.10;
    s.seed = 11;
  } else if (name == "embryo3d") {
    s.shape = {16, 128, 128};
    s.ndim = 3;
    s.n_frames = 20;
    s.n_cells = 30;
    s.divisions = {{2, 5}, {11, 10}, {23, 15}};
    s.spacing = {2.0, 1.0, 1.0};
    s.dropped_center_fraction = 0.05;
    s.spurious_center_fraction = 0.05;
    s.seed = 23;
  } else {
    throw Error("unknown preset '" + name + "'", "config");
  }
  return s;
}

std::vector<std::string> synth_preset_names() { return {"tiny2d", "easy2d", "embryo3d"}; }

nlohmann::json scenario_json(const SynthScenario& s) {
  nlohmann::json divs = nlohmann::json::array();
  for (const SynthDivision& d : s.divisions) divs.push_back({{"track", d.track}, {"t", d.t}});
  return {{"name", s.name},
          {"shape", {s.shape.z, s.shape.y, s.shape.x}},
          {"ndim", s.ndim},
          {"n_frames", s.n_frames},
          {"n_cells", s.n_cells},
          {"divisions", divs},
          {"radius", s.radius},
          {"z_radius", s.z_radius},
          {"motion_sigma", s.motion_sigma},
          {"background", s.background},
          {"intensity", s.intensity},
          {"intensity_jitter", s.intensity_jitter},
          {"noise_sigma", s.noise_sigma},
          {"edge_width", s.edge_width},
          {"min_gap", s.min_gap},
          {"drop_mask_fraction", s.drop_mask_fraction},
          {"dropped_center_fraction", s.dropped_center_fraction},
          {"spurious_center_fraction", s.spurious_center_fraction},
          {"spacing", {s.spacing.z, s.spacing.y, s.spacing.x}},
          {"seed", s.seed}};
}

namespace {

constexpr int kRegrowFrames = 3;
constexpr int kPlacementTries = 1000;
constexpr int kMoveTries = 20;

struct Cell {
  int id;
  Point3 pos;
  double scale;     ///< radius factor, 1 when fully grown
  double scale0;    ///< radius factor at birth
  int born;
  double intensity;
};

class Generator {
public:
  explicit Generator(const SynthScenario& s) : s_(s), rng_(s.seed) {}

  SynthData run();

private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sigma) { return sigma > 0 ? std::normal_distribution<double>(0.0, sigma)(rng_) : 0.0; }

  double zr() const { return s_.ndim == 3 ? s_.z_radius : 1.0; }
  double ry(const Cell& c) const { return s_.radius * c.scale; }
  /// Distance with z stretched so that the ellipsoid becomes a sphere of the in-plane radius.
  double gap_distance(const Point3& a, const Point3& b) const {
    const double zw = s_.ndim == 3 ? s_.radius / s_.z_radius : 0.0;
    return distance(a, b, zw);
  }
  bool inside(const Point3& p, double r) const {
    const double m = r + 2.0;
    if (p.y < m || p.y > s_.shape.y - 1 - m || p.x < m || p.x > s_.shape.x - 1 - m) return false;
    if (s_.ndim == 3) {
      const double mz = r / s_.radius * s_.z_radius + 1.0;
      if (p.z < mz || p.z > s_.shape.z - 1 - mz) return false;
    }
    return true;
  }
  bool fits(const Point3& p, double r, const std::vector<Cell>& others, int skip_id) const {
    if (!inside(p, r)) return false;
    for (const Cell& o : others)
      if (o.id != skip_id && gap_distance(p, o.pos) < r + ry(o) + s_.min_gap) return false;
    return true;
  }
  Point3 random_position(double r) {
    const double m = r + 2.0;
    Point3 p{0.0, uniform(m, s_.shape.y - 1 - m), uniform(m, s_.shape.x - 1 - m)};
    if (s_.ndim == 3) {
      const double mz = s_.z_radius + 1.0;
      p.z = uniform(mz, s_.shape.z - 1 - mz);
    }
    return p;
  }

  void render(int t, const std::vector<Cell>& cells, SynthData& out);

  const SynthScenario& s_;
  std::mt19937_64 rng_;
};

void Generator::render(int t, const std::vector<Cell>& cells, SynthData& out) {
  const Shape sh = s_.shape;
  const auto n = static_cast<std::size_t>(sh.count());
  std::vector<float> signal(n, 0.0f);
  std::vector<float> rho_min(n, std::numeric_limits<float>::infinity());
  std::vector<std::int32_t> owner(n, 0);
  for (const Cell& c : cells) {
    const double r = ry(c);
    const double rz = s_.ndim == 3 ? zr() * c.scale : 0.5;
    const double reach = 1.0 + 3.0 * s_.edge_width / r;
    const int z0 = std::max(0, static_cast<int>(std::floor(c.pos.z - rz * reach)));
    const int z1 = std::min(sh.z - 1, static_cast<int>(std::ceil(c.pos.z + rz * reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.pos.y - r * reach)));
    const int y1 = std::min(sh.y - 1, static_cast<int>(std::ceil(c.pos.y + r * reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(c.pos.x - r * reach)));
    const int x1 = std::min(sh.x - 1, static_cast<int>(std::ceil(c.pos.x + r * reach)));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dz = s_.ndim == 3 ? (z - c.pos.z) / rz : 0.0;
          const double rho = std::sqrt(dz * dz + std::pow((y - c.pos.y) / r, 2) + std::pow((x - c.pos.x) / r, 2));
          const double v = c.intensity * 0.5 * std::erfc((rho - 1.0) * r / s_.edge_width);
          const std::size_t i = (static_cast<std::size_t>(z) * sh.y + y) * sh.x + x;
          signal[i] = std::max(signal[i], static_cast<float>(v));
          if (rho <= 1.0 && rho < rho_min[i]) {
            rho_min[i] = static_cast<float>(rho);
            owner[i] = c.id;
          }
        }
  }
  Volume v(sh, Dtype::u16, s_.ndim, t);
  v.set_spacing(s_.spacing);
  auto data = v.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double val = s_.background + signal[i] + normal(s_.noise_sigma);
    data[i] = static_cast<float>(std::clamp(std::nearbyint(val), 0.0, 65535.0));
  }
  out.frames.push_back(std::move(v));

  std::map<int, std::vector<Coord>> voxels;
  std::size_t i = 0;
  for (int z = 0; z < sh.z; ++z)
    for (int y = 0; y < sh.y; ++y)
      for (int x = 0; x < sh.x; ++x, ++i)
        if (owner[i]) voxels[owner[i]].push_back({z, y, x});
  DetectionSet gt(t);
  std::vector<Coord> centers;
  for (auto& [id, vox] : voxels) {
    InstanceMask m = InstanceMask::from_voxels(id, t, std::move(vox));
    centers.push_back(m.centroid().rounded());
    gt.insert(std::move(m));
  }
  for (const Cell& c : cells)
    if (!voxels.count(c.id)) throw Error("synthetic cell " + std::to_string(c.id) + " vanished at t=" + std::to_string(t), "synth");
  std::sort(centers.begin(), centers.end());
  out.gt.push_back(std::move(gt));
  out.true_centers.push_back(std::move(centers));
}

SynthData Generator::run() {
  SynthData out;
  std::vector<Cell> cells;
  for (int i = 0; i < s_.n_cells; ++i) {
    bool placed = false;
    for (int k = 0; k < kPlacementTries && !placed; ++k) {
      const Point3 p = random_position(s_.radius);
      if (!fits(p, s_.radius, cells, -1)) continue;
      cells.push_back({i + 1, p, 1.0, 1.0, 0, s_.intensity * uniform(1.0 - s_.intensity_jitter, 1.0 + s_.intensity_jitter)});
      placed = true;
    }
    if (!placed)
      throw Error("could not place cell " + std::to_string(i + 1) + " without overlap after " + std::to_string(kPlacementTries) +
                      " samples",
                  "synth");
  }

  std::map<int, std::pair<int, int>> span; // id -> (begin, end)
  std::map<int, int> parent;
  for (const Cell& c : cells) span[c.id] = {0, 0};
  int next_id = s_.n_cells + 1;
  const double daughter_scale = s_.ndim == 3 ? std::cbrt(0.5) : std::sqrt(0.5);

  for (int t = 0; t < s_.n_frames; ++t) {
    if (t > 0) {
      for (const SynthDivision& d : s_.divisions) {
        if (d.t != t) continue;
        auto it = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) { return c.id == d.track; });
        if (it == cells.end())
          throw Error("division of track " + std::to_string(d.track) + " at t=" + std::to_string(t) + ": track not alive", "synth");
        const Cell mother = *it;
        cells.erase(it);
        const double rd = s_.radius * daughter_scale;
        const double offset = rd + 0.5 * s_.min_gap + 0.5;
        Point3 a{}, b{};
        bool ok = false;
        for (int k = 0; k < 100 && !ok; ++k) {
          const double th = uniform(0.0, 2.0 * std::numbers::pi);
          a = {mother.pos.z, mother.pos.y + offset * std::sin(th), mother.pos.x + offset * std::cos(th)};
          b = {mother.pos.z, mother.pos.y - offset * std::sin(th), mother.pos.x - offset * std::cos(th)};
          ok = fits(a, rd, cells, -1) && fits(b, rd, cells, -1);
        }
        if (!ok) {
          // Crowded: keep both daughters inside the image and accept the contact.
          auto clamp_in = [&](Point3 p) {
            const double m = rd + 2.0;
            p.y = std::clamp(p.y, m, s_.shape.y - 1 - m);
            p.x = std::clamp(p.x, m, s_.shape.x - 1 - m);
            return p;
          };
          a = clamp_in(a);
          b = clamp_in(b);
        }
        for (const Point3& p : {a, b}) {
          const int id = next_id++;
          cells.push_back({id, p, daughter_scale, daughter_scale, t, mother.intensity});
          span[id] = {t, t};
          parent[id] = mother.id;
        }
      }
      std::sort(cells.begin(), cells.end(), [](const Cell& x, const Cell& y) { return x.id < y.id; });

      for (Cell& c : cells) {
        const int age = t - c.born;
        c.scale = age >= kRegrowFrames ? 1.0 : c.scale0 + (1.0 - c.scale0) * age / kRegrowFrames;
      }
      for (Cell& c : cells) {
        for (int k = 0; k < kMoveTries; ++k) {
          Point3 p = c.pos;
          p.y += normal(s_.motion_sigma);
          p.x += normal(s_.motion_sigma);
          if (s_.ndim == 3) p.z += normal(s_.motion_sigma * s_.z_radius / s_.radius);
          if (fits(p, ry(c), cells, c.id)) {
            c.pos = p;
            break;
          }
        }
      }
    }
    for (const Cell& c : cells) span[c.id].second = t;
    render(t, cells, out);
  }

  for (const auto& [id, se] : span) {
    Tracklet tr;
    tr.id = id;
    tr.t_start = se.first;
    tr.t_end = se.second;
    for (int t = se.first; t <= se.second; ++t) tr.refs.push_back({t, id});
    if (auto it = parent.find(id); it != parent.end()) tr.parent = it->second;
    out.gt_forest.put(std::move(tr));
  }
  if (const auto errors = forest_validate(out.gt_forest, out.gt); !errors.empty())
    throw Error("synthetic ground truth is inconsistent: " + errors.front(), "synth");

  // Detections: ground truth minus a random subset, renumbered in raster order of centroids.
  std::vector<MaskRef> droppable;
  for (int t = 0; t + 1 < s_.n_frames; ++t)
    for (const auto& [label, m] : out.gt[static_cast<std::size_t>(t)].masks()) droppable.push_back({t, label});
  std::shuffle(droppable.begin(), droppable.end(), rng_);
  droppable.resize(static_cast<std::size_t>(std::lround(s_.drop_mask_fraction * static_cast<double>(droppable.size()))));
  std::sort(droppable.begin(), droppable.end());
  for (int t = 0; t < s_.n_frames; ++t) {
    std::vector<const InstanceMask*> keep;
    for (const auto& [label, m] : out.gt[static_cast<std::size_t>(t)].masks())
      if (!std::binary_search(droppable.begin(), droppable.end(), MaskRef{t, label})) keep.push_back(&m);
    std::sort(keep.begin(), keep.end(), [](const InstanceMask* a, const InstanceMask* b) {
      return a->centroid().rounded() < b->centroid().rounded();
    });
    DetectionSet det(t);
    for (const InstanceMask* m : keep) det.insert_fresh(m->with_label(0));
    out.detections.push_back(std::move(det));
  }

  // Detector centers: from t = 1 some are dropped and background points are added.
  out.centers = out.true_centers;
  out.spurious.assign(static_cast<std::size_t>(s_.n_frames), {});
  for (int t = 1; t < s_.n_frames; ++t) {
    auto& list = out.centers[static_cast<std::size_t>(t)];
    const auto n_true = static_cast<double>(list.size());
    const auto n_drop = static_cast<std::size_t>(std::lround(s_.dropped_center_fraction * n_true));
    const auto n_spur = static_cast<std::size_t>(std::lround(s_.spurious_center_fraction * n_true));
    std::shuffle(list.begin(), list.end(), rng_);
    list.resize(list.size() - std::min(n_drop, list.size()));
    const DetectionSet& gt = out.gt[static_cast<std::size_t>(t)];
    for (std::size_t k = 0, tries = 0; k < n_spur && tries < 1000 * (n_spur + 1); ++tries) {
      const Point3 p = random_position(s_.radius);
      bool clear = true;
      for (const auto& [label, m] : gt.masks())
        if (gap_distance(p, m.centroid()) < 2.0 * s_.radius + s_.min_gap) {
          clear = false;
          break;
        }
      if (!clear) continue;
      list.push_back(p.rounded());
      out.spurious[static_cast<std::size_t>(t)].push_back(p.rounded());
      ++k;
    }
    std::sort(list.begin(), list.end());
  }
  return out;
}

} // namespace

SynthData synth_generate(const SynthScenario& s) {
  s.validate();
  return Generator(s).run();
}

void write_synth(const std::filesystem::path& dir, const SynthScenario& s, const SynthData& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_image_sequence(dir, d.frames, "t");
  write_label_sequence(dir / "seg", d.detections, s.shape, s.ndim, "mask");
  write_label_sequence(dir / "gt", d.gt, s.shape, s.ndim, "mask");
  write_track_table(dir / "gt" / "man_track.txt", d.gt_forest);
  write_points(dir / "centers.txt", d.centers, s.ndim);
  write_points(dir / "spurious.txt", d.spurious, s.ndim);
  std::vector<std::vector<Coord>> seeds(d.true_centers.size());
  if (!seeds.empty()) seeds[0] = d.true_centers[0];
  write_points(dir / "seeds.txt", seeds, s.ndim);
  if (s.ndim == 3) {
    ChunkedVolume store = ChunkedVolume::create(dir / "raw.zarr", s.n_frames, s.shape, 3, Dtype::u16, s.spacing);
    for (int t = 0; t < s.n_frames; ++t) store.write_frame(t, d.frames[static_cast<std::size_t>(t)]);
  }
  std::ofstream out(dir / "scenario.json");
  out << scenario_json(s).dump(2) << '\n';
  if (!out) throw IoError("cannot write scenario.json");
}

} // namespace lineagetrack
