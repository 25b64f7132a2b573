#include <lineagetrack/linking.hpp>

#include <lineagetrack/error.hpp>
#include <lineagetrack/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <tuple>

namespace lineagetrack {

void LinkConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw Error(std::string(name) + " must lie in (0, 1)", "config");
  };
  unit(theta_link, "theta_link");
  unit(theta_small, "theta_small");
  unit(theta_conflict, "theta_conflict");
  if (d != 0 && (d < 4 || d % 2 != 0)) throw Error("patch side d must be even and >= 4", "config");
  if (n_pos < 1) throw Error("n_pos must be >= 1", "config");
  if (n_neg < 0) throw Error("n_neg must be >= 0", "config");
}

PatchSpec make_patch_spec(const Shape& image, const Coord& center, int d) {
  if (!image.contains(center)) throw Error("center out of bounds", "bounds");
  if (d < 4 || d % 2 != 0) throw Error("patch side d must be even and >= 4", "config");
  PatchSpec spec;
  spec.center = center;
  spec.d = d;
  const Box w = spec.window();
  spec.origin = {center.z, std::max(0, w.lo.y), std::max(0, w.lo.x)};
  spec.pad_before = {0, spec.origin.y - w.lo.y, spec.origin.x - w.lo.x};
  spec.pad_after = {0, std::max(0, w.hi.y - image.y), std::max(0, w.hi.x - image.x)};
  return spec;
}

PatchPair extract_patch_pair(const Volume& v_t, const Volume& v_other, const Coord& center, int d) {
  if (v_t.shape() != v_other.shape()) throw Error("volumes differ in shape", "shape");
  PatchPair out;
  out.spec = make_patch_spec(v_t.shape(), center, d);
  out.current = v_t.crop(out.spec.window());
  out.other = v_other.crop(out.spec.window());
  return out;
}

PatchPair extract_patch_pair(const FrameSource& frames, int t, int t_other, const Coord& center, int d) {
  PatchPair out;
  out.spec = make_patch_spec(frames.shape(), center, d);
  out.current = frames.read_box(t, out.spec.window());
  out.other = frames.read_box(t_other, out.spec.window());
  return out;
}

int select_reference_slice(const InstanceMask& mask) {
  if (mask.empty()) throw Error("reference slice of an empty mask", "mask");
  int best_z = 0;
  std::int64_t best = -1;
  for (int z : mask.slices()) {
    const std::int64_t a = mask.slice_area(z);
    if (a > best) {
      best = a;
      best_z = z;
    }
  }
  return best_z;
}

namespace {

// Index in [0, n) from a 64-bit engine; modulo keeps results identical across
// standard libraries.
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

double sq(double v) { return v * v; }

} // namespace

PromptSet build_prompts(const InstanceMask& mask, const PatchSpec& spec, const LinkConfig& cfg, std::uint64_t seed) {
  const Coord offset = spec.global_offset();
  const Box patch_box{{0, 0, 0}, {1, spec.d, spec.d}};
  const InstanceMask local = mask.slice(spec.center.z).translated({-offset.z, -offset.y, -offset.x}).clipped(patch_box);
  if (local.empty()) throw Error("mask does not intersect the patch", "bounds");

  PromptSet p;
  p.box = local.bbox();
  std::mt19937_64 rng(seed);

  // Positives: the in-mask pixel nearest the centroid, then medial samples.
  const Point3 c = local.centroid();
  const std::vector<Coord> pixels = local.voxels();
  Coord first = pixels.front();
  double best = std::numeric_limits<double>::infinity();
  for (const Coord& q : pixels) {
    const double d2 = sq(q.y - c.y) + sq(q.x - c.x);
    if (d2 < best) {
      best = d2;
      first = q;
    }
  }
  p.positive.push_back(first);

  if (cfg.n_pos > 1 && pixels.size() > 1) {
    const Shape ps{1, spec.d, spec.d};
    std::vector<std::uint8_t> fg(static_cast<std::size_t>(ps.count()), 0);
    for (const Coord& q : pixels) fg[static_cast<std::size_t>(q.y * spec.d + q.x)] = 1;
    const auto dist = imgproc::distance_transform(fg, ps);
    float dmax = 0;
    for (const Coord& q : pixels) dmax = std::max(dmax, dist[static_cast<std::size_t>(q.y * spec.d + q.x)]);
    std::vector<Coord> medial, rest;
    for (const Coord& q : pixels) {
      if (q == first) continue;
      (dist[static_cast<std::size_t>(q.y * spec.d + q.x)] >= 0.5f * dmax ? medial : rest).push_back(q);
    }
    auto draw = [&](std::vector<Coord>& pool) {
      while (static_cast<int>(p.positive.size()) < cfg.n_pos && !pool.empty()) {
        const std::size_t i = pick(rng, pool.size());
        p.positive.push_back(pool[i]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
      }
    };
    draw(medial);
    draw(rest);
  }

  // Negatives: ring 2 .. 2 + r_eq + 2 pixels outside the mask, one per angular sector.
  if (cfg.n_neg > 0) {
    std::vector<Coord> boundary;
    for (const Coord& q : pixels) {
      const Coord nb[4] = {{0, q.y - 1, q.x}, {0, q.y + 1, q.x}, {0, q.y, q.x - 1}, {0, q.y, q.x + 1}};
      for (const Coord& n : nb)
        if (!local.contains(n)) {
          boundary.push_back(q);
          break;
        }
    }
    const double r_eq = std::sqrt(static_cast<double>(local.size()) / std::numbers::pi);
    const double inner = 2.0, outer = 2.0 + r_eq + 2.0;
    const int sectors = cfg.n_neg;
    std::vector<std::vector<Coord>> ring(static_cast<std::size_t>(sectors));
    std::vector<Coord> all_ring;
    const int y0 = spec.pad_before.y, y1 = spec.d - spec.pad_after.y;
    const int x0 = spec.pad_before.x, x1 = spec.d - spec.pad_after.x;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const Coord q{0, y, x};
        if (local.contains(q)) continue;
        double dmin = std::numeric_limits<double>::infinity();
        for (const Coord& b : boundary) dmin = std::min(dmin, sq(b.y - y) + sq(b.x - x));
        dmin = std::sqrt(dmin);
        if (dmin < inner || dmin > outer) continue;
        double ang = std::atan2(y - c.y, x - c.x) + std::numbers::pi;
        auto s = static_cast<int>(ang / (2.0 * std::numbers::pi) * sectors);
        s = std::clamp(s, 0, sectors - 1);
        ring[static_cast<std::size_t>(s)].push_back(q);
        all_ring.push_back(q);
      }
    for (auto& sector : ring) {
      if (sector.empty()) continue;
      p.negative.push_back(sector[pick(rng, sector.size())]);
    }
    std::erase_if(all_ring, [&](const Coord& q) { return std::find(p.negative.begin(), p.negative.end(), q) != p.negative.end(); });
    while (static_cast<int>(p.negative.size()) < cfg.n_neg && !all_ring.empty()) {
      const std::size_t i = pick(rng, all_ring.size());
      p.negative.push_back(all_ring[i]);
      all_ring.erase(all_ring.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
  return p;
}

Decision classify_prediction(const InstanceMask& pred, const InstanceMask& source, const DetectionSet& detections,
                             const Shape& image_shape, const LinkConfig& cfg) {
  const auto pred_slices = pred.slices();
  const std::int64_t source_area =
      pred_slices.size() == 1 && source.slices().size() > 1 ? source.slice_area(pred_slices.front()) : source.size();
  if (pred.empty() || static_cast<double>(pred.size()) < cfg.theta_small * static_cast<double>(source_area))
    return Decision::terminated("too small");
  if (pred.touches_xy_border(image_shape)) return Decision::terminated("touches image boundary");

  int best_label = 0;
  std::tuple<double, double, int> best{-1.0, -1.0, 0};
  double max_iou = 0.0;
  for (int label : detections.overlapping(pred)) {
    const OverlapStats s = mask_overlap_stats(pred, detections.at(label));
    max_iou = std::max(max_iou, s.iou);
    const std::tuple<double, double, int> key{s.frac_of_smaller, s.iou, -label};
    if (key > best) {
      best = key;
      best_label = label;
    }
  }
  if (best_label != 0 && std::get<0>(best) >= cfg.theta_link) return Decision::linked(best_label);
  if (max_iou < cfg.theta_conflict) return Decision::recovered();
  return Decision::terminated("ambiguous");
}

MitosisResolution resolve_mitosis(const InstanceMask& parent, const std::vector<InstanceMask>& children) {
  if (children.empty()) throw Error("mitosis resolution needs at least one child", "mitosis");
  MitosisResolution r;
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < children.size(); ++i)
    order.emplace_back(distance(children[i].centroid(), parent.centroid()), i);
  std::sort(order.begin(), order.end());
  for (std::size_t k = 0; k < order.size(); ++k) (k < 2 ? r.retained : r.severed).push_back(order[k].second);
  std::sort(r.retained.begin(), r.retained.end());
  std::sort(r.severed.begin(), r.severed.end());
  return r;
}

int default_patch_side(const DetectionSet& seeds) {
  std::vector<double> diam;
  for (const auto& [label, m] : seeds.masks()) diam.push_back(equivalent_diameter(m));
  if (diam.empty()) return 32;
  std::sort(diam.begin(), diam.end());
  const std::size_t n = diam.size();
  const double median = n % 2 ? diam[n / 2] : 0.5 * (diam[n / 2 - 1] + diam[n / 2]);
  int d = static_cast<int>(std::ceil(4.0 * median));
  if (d % 2) ++d;
  return std::max(16, d);
}

PropagationResult propagate_mask(const FrameSource& frames, int t_src, int t_target, const InstanceMask& source,
                                 const PromptableBackend& backend, const LinkConfig& cfg, int d, std::uint64_t seed) {
  const Shape image = frames.shape();
  const int z = select_reference_slice(source);
  const Point3 c = source.slice(z).centroid();
  Coord center{z, static_cast<int>(std::lround(c.y)), static_cast<int>(std::lround(c.x))};
  center.y = std::clamp(center.y, 0, image.y - 1);
  center.x = std::clamp(center.x, 0, image.x - 1);

  PropagationResult out;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int side = attempt == 0 ? d : 2 * d;
    const PatchPair pair = extract_patch_pair(frames, t_src, t_target, center, side);
    const PromptSet prompts = build_prompts(source, pair.spec, cfg, seed);
    const InstanceMask local = backend.propagate(pair.current, pair.other, prompts);
    out.spec = pair.spec;
    out.retried = attempt > 0;
    out.pred = local.translated(pair.spec.global_offset()).clipped(full_box(image)).with_t(t_target);
    if (out.pred.empty() || !cfg.retry_on_patch_border || attempt > 0) break;

    const Box w = pair.spec.window();
    const Box& b = out.pred.bbox();
    const bool at_patch_edge = (b.lo.y == w.lo.y && w.lo.y > 0) || (b.lo.x == w.lo.x && w.lo.x > 0) ||
                               (b.hi.y == w.hi.y && w.hi.y < image.y) || (b.hi.x == w.hi.x && w.hi.x < image.x);
    if (!at_patch_edge) break;
  }
  return out;
}

namespace {

struct TrackletBuilder {
  std::vector<MaskRef> refs; // descending t while linking backwards
  std::optional<int> parent;
};

struct Active {
  int id;
  int label;
};

} // namespace

LinkResult backward_link_pass(const FrameSource& frames, std::vector<DetectionSet> detections,
                              const std::optional<DetectionSet>& seeds, const PromptableBackend& backend, LinkConfig cfg,
                              const ExecutionOptions& exec) {
  cfg.validate();
  if (!backend.capabilities().propagate) throw Error("backend cannot propagate", "config");
  const int n_frames = frames.n_frames();
  if (static_cast<int>(detections.size()) != n_frames)
    throw Error("detections cover " + std::to_string(detections.size()) + " frames, images " + std::to_string(n_frames), "shape");
  for (int t = 0; t < n_frames; ++t) {
    if (detections[static_cast<std::size_t>(t)].t() != t) {
      DetectionSet fixed(t);
      for (const auto& [label, m] : detections[static_cast<std::size_t>(t)].masks()) fixed.insert(m);
      detections[static_cast<std::size_t>(t)] = std::move(fixed);
    }
  }
  const int last = n_frames - 1;
  if (seeds) {
    DetectionSet s(last);
    for (const auto& [label, m] : seeds->masks()) s.insert(m);
    detections[static_cast<std::size_t>(last)] = std::move(s);
  }
  const int d = cfg.d != 0 ? cfg.d : default_patch_side(detections[static_cast<std::size_t>(last)]);
  const Shape image = frames.shape();
  const bool volumetric = frames.ndim() == 3 && backend.capabilities().segment3d;

  LinkResult result;
  std::map<int, TrackletBuilder> builders;
  int next_id = 1;
  std::vector<Active> active;
  for (const auto& [label, m] : detections[static_cast<std::size_t>(last)].masks()) {
    builders[next_id].refs.push_back({last, label});
    active.push_back({next_id++, label});
  }

  for (int t = last; t >= 1; --t) {
    if (exec.progress) exec.progress(t, active.size());
    const DetectionSet& here = detections[static_cast<std::size_t>(t)];

    // Proposal phase: independent backend calls per tracklet.
    const auto proposals = parallel_map(active.size(), exec.workers, [&](std::size_t i) {
      const Active& a = active[i];
      try {
        return propagate_mask(frames, t, t - 1, here.at(a.label), backend, cfg, d,
                              mix_seed(exec.seed, static_cast<std::uint64_t>(a.id), static_cast<std::uint64_t>(t)));
      } catch (const std::exception& e) {
        throw Error("propagation failed for tracklet " + std::to_string(a.id) + " at t=" + std::to_string(t) + ": " + e.what(),
                    "backend");
      }
    });

    // Commit phase, ordered by tracklet id.
    DetectionSet& prev = detections[static_cast<std::size_t>(t - 1)];
    std::map<int, std::vector<std::size_t>> claims;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const InstanceMask& source = here.at(active[i].label);
      const PropagationResult& prop = proposals[i];
      if (prop.retried) ++result.stats.retries;
      const Decision dec = classify_prediction(prop.pred, source, prev, image, cfg);
      if (dec.kind == Decision::Kind::linked) {
        claims[dec.label].push_back(i);
        ++result.stats.linked;
        continue;
      }
      if (dec.kind == Decision::Kind::terminated) {
        ++result.stats.terminated;
        continue;
      }
      InstanceMask recovered = prop.pred;
      if (volumetric) {
        const Coord click = recovered.centroid().rounded();
        const Coord half{d, d, d};
        const Box box{click - half, click + half};
        const Volume patch = frames.read_box(t - 1, box);
        const Segment3dResult seg = backend.segment3d(patch, click - box.lo);
        if (!seg.empty && !seg.mask.empty()) recovered = seg.mask.translated(box.lo).clipped(full_box(image));
      }
      for (int other : prev.overlapping(recovered)) recovered = recovered.minus(prev.at(other));
      const auto pred_slices = recovered.slices();
      const std::int64_t src_area = pred_slices.size() == 1 && source.slices().size() > 1
                                        ? source.slice_area(pred_slices.front())
                                        : source.size();
      if (recovered.empty() || static_cast<double>(recovered.size()) < cfg.theta_small * static_cast<double>(src_area)) {
        ++result.stats.terminated;
        continue;
      }
      const int label = prev.insert_fresh(recovered.with_t(t - 1));
      claims[label].push_back(i);
      ++result.stats.recovered;
    }

    // Mitosis resolution and new tracklets.
    std::vector<Active> next;
    for (const auto& [label, idx] : claims) {
      if (idx.size() == 1) {
        builders[active[idx.front()].id].refs.push_back({t - 1, label});
        next.push_back({active[idx.front()].id, label});
        continue;
      }
      std::vector<InstanceMask> children;
      for (std::size_t i : idx) children.push_back(here.at(active[i].label));
      const MitosisResolution res = resolve_mitosis(prev.at(label), children);
      result.stats.severed += res.severed.size();
      const int parent = next_id++;
      builders[parent].refs.push_back({t - 1, label});
      for (std::size_t k : res.retained) builders[active[idx[k]].id].parent = parent;
      next.push_back({parent, label});
      ++result.stats.divisions;
    }
    for (const auto& [label, m] : prev.masks()) {
      if (claims.count(label)) continue;
      builders[next_id].refs.push_back({t - 1, label});
      next.push_back({next_id++, label});
    }
    std::sort(next.begin(), next.end(), [](const Active& a, const Active& b) { return a.id < b.id; });
    active = std::move(next);
  }
  if (exec.progress) exec.progress(0, active.size());

  for (auto& [id, b] : builders) {
    Tracklet tr;
    tr.id = id;
    tr.refs.assign(b.refs.rbegin(), b.refs.rend());
    tr.t_start = tr.refs.front().t;
    tr.t_end = tr.refs.back().t;
    tr.parent = b.parent;
    result.forest.put(std::move(tr));
  }
  result.detections = std::move(detections);
  return result;
}

} // namespace lineagetrack
