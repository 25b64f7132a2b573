#include <lineagetrack/tracker.hpp>

#include <lineagetrack/error.hpp>
#include <lineagetrack/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace lineagetrack {

void TrackerConfig::validate() const {
  if (tau < 0.0) throw Error("tau must be positive", "config");
  if (!(s_link > 0.0 && s_link <= 1.0)) throw Error("s_link must lie in (0, 1]", "config");
  if (!(delta_mitosis >= 0.0 && delta_mitosis < 1.0)) throw Error("delta_mitosis must lie in [0, 1)", "config");
  if (d != 0 && (d < 4 || d % 2 != 0)) throw Error("patch side d must be even and >= 4", "config");
  if (z_weight < 0.0) throw Error("z_weight must be non-negative", "config");
  link.validate();
}

std::vector<Candidate> find_candidates(const Coord& center, const std::vector<Coord>& centers_next, double tau,
                                       double z_weight) {
  if (!(tau > 0.0)) throw Error("tau must be positive", "config");
  std::vector<Candidate> out;
  const Point3 c = to_point(center);
  for (std::size_t i = 0; i < centers_next.size(); ++i) {
    const double dist = distance(c, to_point(centers_next[i]), z_weight);
    if (dist <= tau) out.push_back({i, centers_next[i], dist});
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.center != b.center) return a.center < b.center;
    return a.index < b.index;
  });
  return out;
}

double cosine_similarity(const MemoryFeature& u, const MemoryFeature& v) {
  if (u.dim() != v.dim()) throw Error("feature dimensions differ", "shape");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) {
    dot += static_cast<double>(u.values[i]) * v.values[i];
    nu += static_cast<double>(u.values[i]) * u.values[i];
    nv += static_cast<double>(v.values[i]) * v.values[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error("cosine similarity of a zero vector", "degenerate");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

std::vector<double> score_candidates(const PromptableBackend& backend, const Volume& tracked_patch, const Box& tracked_box,
                                     const std::vector<Volume>& candidate_patches) {
  std::vector<double> scores;
  if (candidate_patches.empty()) return scores;
  for (const Volume& p : candidate_patches)
    if (p.shape() != tracked_patch.shape()) throw Error("candidate patch differs in shape from the tracked patch", "shape");
  const MemoryFeature ref = backend.embed(tracked_patch, tracked_box).feature;
  scores.reserve(candidate_patches.size());
  for (const Volume& p : candidate_patches) scores.push_back(cosine_similarity(ref, backend.embed(p, tracked_box).feature));
  return scores;
}

LinkDecision decide_link(const std::vector<double>& scores, const TrackerConfig& cfg) {
  if (scores.empty()) return LinkDecision::missing();
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  if (scores[best] >= cfg.s_link) return LinkDecision::link(best);
  if (scores.size() < 2) return LinkDecision::missing();
  std::size_t second = best == 0 ? 1 : 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != best && scores[i] > scores[second]) second = i;
  if (scores[best] - scores[second] < cfg.delta_mitosis)
    return LinkDecision::divide(std::min(best, second), std::max(best, second));
  return LinkDecision::missing();
}

namespace {

struct ClaimState {
  const ClaimProposal* proposal;
  std::vector<bool> excluded;
  LinkDecision decision;
};

void redecide(ClaimState& s, const TrackerConfig& cfg) {
  std::vector<std::size_t> keep;
  std::vector<double> sub;
  for (std::size_t k = 0; k < s.excluded.size(); ++k)
    if (!s.excluded[k]) {
      keep.push_back(k);
      sub.push_back(s.proposal->scores[k]);
    }
  LinkDecision d = decide_link(sub, cfg);
  if (d.kind != LinkDecision::Kind::missing) {
    d.first = keep[d.first];
    if (d.kind == LinkDecision::Kind::divide) d.second = keep[d.second];
  }
  s.decision = d;
}

} // namespace

ClaimResolution resolve_claims(const std::vector<ClaimProposal>& proposals, const TrackerConfig& cfg) {
  std::vector<ClaimState> states;
  states.reserve(proposals.size());
  for (const ClaimProposal& p : proposals) {
    if (p.centers.size() != p.scores.size()) throw Error("proposal centers and scores differ in length", "shape");
    if (std::set<std::size_t>(p.centers.begin(), p.centers.end()).size() != p.centers.size())
      throw Error("proposal lists a center twice", "claims");
    states.push_back({&p, std::vector<bool>(p.centers.size(), false), {}});
  }
  std::sort(states.begin(), states.end(),
            [](const ClaimState& a, const ClaimState& b) { return a.proposal->lineage < b.proposal->lineage; });
  for (std::size_t i = 1; i < states.size(); ++i)
    if (states[i].proposal->lineage == states[i - 1].proposal->lineage) throw Error("duplicate lineage in proposals", "claims");
  for (ClaimState& s : states) redecide(s, cfg);

  ClaimResolution out;
  for (;;) {
    // center -> (state index, position in that proposal)
    std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> claims;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const LinkDecision& d = states[i].decision;
      if (d.kind == LinkDecision::Kind::missing) continue;
      claims[states[i].proposal->centers[d.first]].emplace_back(i, d.first);
      if (d.kind == LinkDecision::Kind::divide) claims[states[i].proposal->centers[d.second]].emplace_back(i, d.second);
    }
    std::set<std::size_t> losers;
    for (const auto& [center, who] : claims) {
      if (who.size() < 2) continue;
      // States are sorted by lineage id, so a strict comparison keeps the lower id on ties.
      std::size_t win = 0;
      for (std::size_t k = 1; k < who.size(); ++k) {
        const double sk = states[who[k].first].proposal->scores[who[k].second];
        const double sw = states[who[win].first].proposal->scores[who[win].second];
        if (sk > sw) win = k;
      }
      for (std::size_t k = 0; k < who.size(); ++k) {
        if (k == win) continue;
        states[who[k].first].excluded[who[k].second] = true;
        losers.insert(who[k].first);
      }
    }
    if (losers.empty()) break;
    ++out.rounds;
    for (std::size_t i : losers) redecide(states[i], cfg);
  }
  for (const ClaimState& s : states) out.decisions[s.proposal->lineage] = s.decision;
  return out;
}

namespace {

std::optional<InstanceMask> accept_recovery(const PropagationResult& prop, const InstanceMask& tracked,
                                            const DetectionSet& committed_next, const Shape& shape,
                                            const TrackerConfig& cfg) {
  const Decision dec = classify_prediction(prop.pred, tracked, committed_next, shape, cfg.link);
  if (dec.kind != Decision::Kind::recovered) return std::nullopt;
  return prop.pred;
}

Coord slice_center(const InstanceMask& mask) {
  const int z = select_reference_slice(mask);
  const Point3 c = mask.slice(z).centroid();
  return {z, static_cast<int>(std::lround(c.y)), static_cast<int>(std::lround(c.x))};
}

InstanceMask make_disjoint(InstanceMask m, const DetectionSet& committed) {
  for (int other : committed.overlapping(m)) m = m.minus(committed.at(other));
  return m;
}

struct Active {
  int id;
  int label;
};

} // namespace

std::optional<RecoveredCell> recover_missing(const FrameSource& frames, int t, const InstanceMask& tracked,
                                             const DetectionSet& committed_next, const PromptableBackend& backend,
                                             const TrackerConfig& cfg, int d, std::uint64_t seed) {
  const PropagationResult prop = propagate_mask(frames, t, t + 1, tracked, backend, cfg.link, d, seed);
  auto pred = accept_recovery(prop, tracked, committed_next, frames.shape(), cfg);
  if (!pred) return std::nullopt;
  return RecoveredCell{pred->centroid().rounded(), *pred};
}

ForwardResult forward_track_pass(const FrameSource& frames, const std::vector<std::vector<Coord>>& centers,
                                 const std::vector<Seed>& seeds, const PromptableBackend& embedder,
                                 const PromptableBackend& segmenter, TrackerConfig cfg, const ExecutionOptions& exec) {
  cfg.validate();
  if (!embedder.capabilities().embed || !embedder.capabilities().propagate)
    throw Error("tracking backend must support embed and propagate", "config");
  if (!segmenter.capabilities().segment3d) throw Error("segmentation backend must support segment3d", "config");
  const int n_frames = frames.n_frames();
  if (static_cast<int>(centers.size()) != n_frames)
    throw Error("centers cover " + std::to_string(centers.size()) + " frames, images " + std::to_string(n_frames), "shape");
  const Shape shape = frames.shape();
  const Spacing spacing = frames.spacing();
  const double zw = cfg.z_weight > 0.0 ? cfg.z_weight : spacing.y / spacing.z;

  ForwardResult r;
  for (int t = 0; t < n_frames; ++t) r.masks.emplace_back(t);
  r.used_centers.resize(static_cast<std::size_t>(n_frames));

  int seg_half = cfg.d != 0 ? cfg.d : 32;
  // Click segmentation in a window of side 2 * seg_half, clipped to the image so
  // that no zero padding reaches the backend.
  auto segment_at = [&](int t, const Coord& c) {
    const Box box = Box{{c.z - seg_half, c.y - seg_half, c.x - seg_half}, {c.z + seg_half, c.y + seg_half, c.x + seg_half}}
                        .intersect(full_box(shape));
    const Volume patch = frames.read_box(t, box);
    const Segment3dResult seg = segmenter.segment3d(patch, c - box.lo);
    if (seg.empty) return InstanceMask{};
    return seg.mask.translated(box.lo).clipped(full_box(shape)).with_t(t);
  };
  auto wrap = [](int id, int t, const std::exception& e) {
    return Error("tracking failed for lineage " + std::to_string(id) + " at t=" + std::to_string(t) + ": " + e.what(),
                 "backend");
  };

  std::map<int, std::vector<MaskRef>> refs;
  std::map<int, int> parent;
  int next_id = 1;
  std::vector<Active> active;

  // Frame 0: user seeds.
  std::vector<InstanceMask> seed_masks(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!shape.contains(seeds[i].center)) throw Error("seed center out of bounds", "bounds");
    seed_masks[i] = seeds[i].mask ? seeds[i].mask->with_t(0) : segment_at(0, seeds[i].center);
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const InstanceMask m = make_disjoint(seed_masks[i], r.masks[0]);
    if (m.empty()) {
      ++r.stats.terminated;
      continue;
    }
    const int label = r.masks[0].insert_fresh(m);
    refs[next_id].push_back({0, label});
    active.push_back({next_id++, label});
    r.used_centers[0].push_back(seeds[i].center);
  }

  const int d = cfg.d != 0 ? cfg.d : default_patch_side(r.masks[0]);
  seg_half = d;
  if (cfg.tau == 0.0) {
    std::vector<double> diam;
    for (const auto& [label, m] : r.masks[0].masks()) diam.push_back(equivalent_diameter(m));
    std::sort(diam.begin(), diam.end());
    const std::size_t n = diam.size();
    const double median = n == 0 ? d / 4.0 : (n % 2 ? diam[n / 2] : 0.5 * (diam[n / 2 - 1] + diam[n / 2]));
    cfg.tau = 2.0 * median;
  }

  for (int t = 0; t + 1 < n_frames; ++t) {
    if (exec.progress) exec.progress(t, active.size());
    const std::vector<Coord>& next_centers = centers[static_cast<std::size_t>(t + 1)];
    DetectionSet& here = r.masks[static_cast<std::size_t>(t)];
    DetectionSet& next = r.masks[static_cast<std::size_t>(t + 1)];

    // Proposal phase: candidate search and scoring per lineage.
    const auto proposals = parallel_map(active.size(), exec.workers, [&](std::size_t i) {
      const Active& a = active[i];
      try {
        const InstanceMask& mask = here.at(a.label);
        const Coord sc = slice_center(mask);
        const PatchSpec spec = make_patch_spec(shape, sc, d);
        const Volume tracked_patch = frames.read_box(t, spec.window());
        const Coord off = spec.global_offset();
        const Box patch_box{{0, 0, 0}, {1, d, d}};
        const Box box = mask.slice(sc.z).translated({-off.z, -off.y, -off.x}).clipped(patch_box).bbox();

        ClaimProposal p;
        p.lineage = a.id;
        std::vector<Volume> patches;
        for (const Candidate& c : find_candidates(mask.centroid().rounded(), next_centers, cfg.tau, zw)) {
          p.centers.push_back(c.index);
          patches.push_back(frames.read_box(t + 1, make_patch_spec(shape, c.center, d).window()));
        }
        p.scores = score_candidates(embedder, tracked_patch, box, patches);
        return p;
      } catch (const std::exception& e) {
        throw wrap(a.id, t, e);
      }
    });
    const ClaimResolution resolution = resolve_claims(proposals, cfg);

    // Segmentation of every accepted center, then a serial commit by lineage id.
    struct Job {
      std::size_t active_index;
      std::vector<std::size_t> centers;
    };
    std::vector<Job> jobs;
    std::vector<std::size_t> missing;
    std::vector<std::pair<std::size_t, std::size_t>> seg_items; // (job, center index)
    for (std::size_t i = 0; i < active.size(); ++i) {
      const LinkDecision& dec = resolution.decisions.at(active[i].id);
      const ClaimProposal& p = proposals[i];
      if (dec.kind == LinkDecision::Kind::missing) {
        missing.push_back(i);
        continue;
      }
      Job job{i, {p.centers[dec.first]}};
      if (dec.kind == LinkDecision::Kind::divide) job.centers.push_back(p.centers[dec.second]);
      std::sort(job.centers.begin(), job.centers.end());
      for (std::size_t c : job.centers) seg_items.emplace_back(jobs.size(), c);
      jobs.push_back(std::move(job));
    }
    const auto seg_masks = parallel_map(seg_items.size(), exec.workers, [&](std::size_t k) {
      const auto [j, c] = seg_items[k];
      try {
        return segment_at(t + 1, next_centers[c]);
      } catch (const std::exception& e) {
        throw wrap(active[jobs[j].active_index].id, t + 1, e);
      }
    });

    std::vector<Active> next_active;
    auto big_enough = [&](const InstanceMask& m, const InstanceMask& tracked) {
      return !m.empty() && static_cast<double>(m.size()) >= cfg.link.theta_small * static_cast<double>(tracked.size());
    };
    std::size_t k = 0;
    for (const Job& job : jobs) {
      const Active& a = active[job.active_index];
      const InstanceMask& tracked = here.at(a.label);
      std::vector<std::pair<std::size_t, int>> placed; // (center, label)
      for (std::size_t c : job.centers) {
        const InstanceMask m = make_disjoint(seg_masks[k++], next);
        if (!big_enough(m, tracked)) continue;
        placed.emplace_back(c, next.insert_fresh(m));
      }
      if (placed.empty()) {
        ++r.stats.terminated;
        continue;
      }
      for (const auto& [c, label] : placed) r.used_centers[static_cast<std::size_t>(t + 1)].push_back(next_centers[c]);
      if (placed.size() == 1) {
        refs[a.id].push_back({t + 1, placed.front().second});
        next_active.push_back({a.id, placed.front().second});
        ++r.stats.links;
        continue;
      }
      for (const auto& [c, label] : placed) {
        const int child = next_id++;
        refs[child].push_back({t + 1, label});
        parent[child] = a.id;
        next_active.push_back({child, label});
      }
      ++r.stats.divisions;
    }

    // Recovery for lineages whose candidates all failed.
    const auto recoveries = parallel_map(missing.size(), exec.workers, [&](std::size_t m) {
      const Active& a = active[missing[m]];
      try {
        return propagate_mask(frames, t, t + 1, here.at(a.label), embedder, cfg.link, d,
                              mix_seed(exec.seed, static_cast<std::uint64_t>(a.id), static_cast<std::uint64_t>(t)));
      } catch (const std::exception& e) {
        throw wrap(a.id, t, e);
      }
    });
    for (std::size_t m = 0; m < missing.size(); ++m) {
      const Active& a = active[missing[m]];
      const InstanceMask& tracked = here.at(a.label);
      const auto pred = accept_recovery(recoveries[m], tracked, next, shape, cfg);
      if (!pred) {
        ++r.stats.terminated;
        continue;
      }
      const Coord center = slice_center(*pred);
      InstanceMask seg;
      try {
        seg = segment_at(t + 1, center);
      } catch (const std::exception& e) {
        throw wrap(a.id, t + 1, e);
      }
      if (seg.empty()) seg = *pred;
      seg = make_disjoint(seg, next);
      if (!big_enough(seg, tracked)) {
        ++r.stats.terminated;
        continue;
      }
      const int label = next.insert_fresh(seg);
      refs[a.id].push_back({t + 1, label});
      next_active.push_back({a.id, label});
      r.used_centers[static_cast<std::size_t>(t + 1)].push_back(center);
      ++r.stats.recovered;
    }

    std::set<Coord> used(r.used_centers[static_cast<std::size_t>(t + 1)].begin(),
                         r.used_centers[static_cast<std::size_t>(t + 1)].end());
    for (const Coord& c : next_centers)
      if (!used.count(c)) ++r.stats.discarded_centers;
    std::sort(next_active.begin(), next_active.end(), [](const Active& x, const Active& y) { return x.id < y.id; });
    active = std::move(next_active);
  }
  if (exec.progress) exec.progress(n_frames - 1, active.size());

  for (auto& [id, list] : refs) {
    Tracklet tr;
    tr.id = id;
    tr.refs = std::move(list);
    tr.t_start = tr.refs.front().t;
    tr.t_end = tr.refs.back().t;
    if (auto it = parent.find(id); it != parent.end()) tr.parent = it->second;
    r.forest.put(std::move(tr));
  }
  for (auto& frame : r.used_centers) std::sort(frame.begin(), frame.end());
  return r;
}

std::vector<Coord> detect_centers(const Volume& volume, double min_sigma, double max_sigma, double threshold, int n_scales) {
  if (!(min_sigma > 0.0) || !(max_sigma >= min_sigma)) throw Error("detect_centers needs 0 < min_sigma <= max_sigma", "config");
  if (n_scales < 1) throw Error("n_scales must be >= 1", "config");
  const Shape s = volume.shape();
  std::vector<float> best(static_cast<std::size_t>(s.count()), -std::numeric_limits<float>::infinity());
  for (int k = 0; k < n_scales; ++k) {
    const double sigma = n_scales == 1 ? min_sigma : min_sigma + (max_sigma - min_sigma) * k / (n_scales - 1);
    const Volume resp = imgproc::negative_log(volume, sigma, volume.spacing());
    const auto data = resp.data();
    for (std::size_t i = 0; i < best.size(); ++i) best[i] = std::max(best[i], data[i]);
  }

  struct Peak {
    float value;
    Coord at;
  };
  std::vector<Peak> peaks;
  auto value = [&](int z, int y, int x) { return best[static_cast<std::size_t>((static_cast<std::int64_t>(z) * s.y + y) * s.x + x)]; };
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const float v = value(z, y, x);
        if (!(v > threshold)) continue;
        bool is_max = true;
        for (int dz = -1; dz <= 1 && is_max; ++dz)
          for (int dy = -1; dy <= 1 && is_max; ++dy)
            for (int dx = -1; dx <= 1 && is_max; ++dx) {
              const Coord q{z + dz, y + dy, x + dx};
              if ((dz || dy || dx) && s.contains(q) && value(q.z, q.y, q.x) > v) is_max = false;
            }
        if (is_max) peaks.push_back({v, {z, y, x}});
      }
  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.value != b.value ? a.value > b.value : a.at < b.at; });

  const double zw = volume.spacing().z / volume.spacing().y;
  std::vector<Coord> kept;
  for (const Peak& p : peaks) {
    bool close = false;
    for (const Coord& q : kept)
      if (distance(to_point(p.at), to_point(q), zw) <= min_sigma) {
        close = true;
        break;
      }
    if (!close) kept.push_back(p.at);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

} // namespace lineagetrack
