#include <lineagetrack/lineage.hpp>

#include <lineagetrack/error.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace lineagetrack {

const InstanceMask& DetectionSet::at(int label) const {
  auto it = masks_.find(label);
  if (it == masks_.end()) throw Error("no mask with label " + std::to_string(label) + " at t=" + std::to_string(t_), "lookup");
  return it->second;
}

void DetectionSet::insert(InstanceMask mask) {
  if (mask.empty()) throw Error("cannot insert an empty mask", "detections");
  if (mask.label() <= 0) throw Error("mask labels must be positive", "detections");
  if (masks_.count(mask.label())) throw Error("duplicate label " + std::to_string(mask.label()) + " at t=" + std::to_string(t_), "detections");
  if (!overlapping(mask).empty()) throw Error("mask " + std::to_string(mask.label()) + " overlaps an existing mask at t=" + std::to_string(t_), "detections");
  const int label = mask.label();
  masks_.emplace(label, mask.with_t(t_));
  next_label_ = std::max(next_label_, label + 1);
}

int DetectionSet::insert_fresh(const InstanceMask& mask) {
  const int label = next_label_;
  insert(mask.with_label(label));
  return label;
}

void DetectionSet::erase(int label) { masks_.erase(label); }

std::vector<int> DetectionSet::overlapping(const InstanceMask& m) const {
  std::vector<int> out;
  if (m.empty()) return out;
  for (const auto& [label, other] : masks_) {
    if (!other.bbox().intersects(m.bbox())) continue;
    if (intersection_size(other, m) > 0) out.push_back(label);
  }
  return out;
}

InstanceMask DetectionSet::occupied() const {
  std::vector<Run> runs;
  for (const auto& [label, m] : masks_) runs.insert(runs.end(), m.runs().begin(), m.runs().end());
  return InstanceMask::from_runs(0, t_, std::move(runs));
}

const Tracklet& LineageForest::at(int id) const {
  auto it = tracklets_.find(id);
  if (it == tracklets_.end()) throw Error("no tracklet with id " + std::to_string(id), "lookup");
  return it->second;
}

std::vector<int> LineageForest::children_of(int id) const {
  std::vector<int> out;
  for (const auto& [cid, t] : tracklets_)
    if (t.parent && *t.parent == id) out.push_back(cid);
  return out;
}

namespace {

std::string fmt(const char* rule, int id) {
  std::ostringstream os;
  os << rule << ": id=" << id;
  return os.str();
}

std::string fmt(const char* rule, int id, const char* key, int value) {
  std::ostringstream os;
  os << rule << ": id=" << id << ", " << key << '=' << value;
  return os.str();
}

} // namespace

std::vector<std::string> forest_validate(const LineageForest& forest) {
  std::vector<std::string> out;
  std::set<MaskRef> seen;
  std::map<int, int> child_count;

  for (const auto& [id, tr] : forest.tracklets()) {
    if (id <= 0 || tr.id != id) out.push_back(fmt("invalid id", id));
    if (tr.t_start > tr.t_end) {
      out.push_back(fmt("bad span", id));
      continue;
    }
    std::set<int> frames;
    for (const MaskRef& r : tr.refs) {
      if (r.t < tr.t_start || r.t > tr.t_end) out.push_back(fmt("ref outside span", id, "t", r.t));
      if (!frames.insert(r.t).second) out.push_back(fmt("duplicate frame", id, "t", r.t));
      if (!seen.insert(r).second) out.push_back(fmt("shared mask", id, "t", r.t));
    }
    for (int t = tr.t_start; t <= tr.t_end; ++t) {
      if (!frames.count(t)) {
        out.push_back(fmt("temporal gap", id, "t", t));
        break;
      }
    }
    if (tr.parent) {
      const int p = *tr.parent;
      if (p == id) {
        out.push_back(fmt("self parent", id));
      } else if (!forest.contains(p)) {
        out.push_back(fmt("unknown parent", id, "parent", p));
      } else {
        ++child_count[p];
        if (forest.at(p).t_end != tr.t_start - 1) out.push_back(fmt("parent span mismatch", id, "parent", p));
      }
    }
  }
  for (const auto& [p, n] : child_count)
    if (n > 2) out.push_back(fmt("non-binary division", p));

  // A parent chain that revisits its start, or outlives the forest size, is a cycle.
  for (const auto& [id, tr] : forest.tracklets()) {
    std::optional<int> cur = tr.parent;
    std::size_t steps = 0;
    bool cyclic = false;
    while (cur && *cur != id && forest.contains(*cur)) {
      if (++steps > forest.size()) {
        cyclic = true;
        break;
      }
      cur = forest.at(*cur).parent;
    }
    if (cur && *cur == id && *tr.parent != id) cyclic = true;
    if (cyclic) out.push_back(fmt("cycle", id));
  }
  return out;
}

std::vector<std::string> forest_validate(const LineageForest& forest, const std::vector<DetectionSet>& frames) {
  std::vector<std::string> out = forest_validate(forest);
  for (const auto& [id, tr] : forest.tracklets()) {
    for (const MaskRef& r : tr.refs) {
      if (r.t < 0 || r.t >= static_cast<int>(frames.size()) || !frames[static_cast<std::size_t>(r.t)].contains(r.label))
        out.push_back(fmt("dangling mask", id, "t", r.t));
    }
  }
  return out;
}

void relabel_by_tracklet(LineageForest& forest, std::vector<DetectionSet>& frames) {
  std::vector<DetectionSet> out;
  out.reserve(frames.size());
  for (const DetectionSet& ds : frames) out.emplace_back(ds.t());
  LineageForest relabeled;
  for (const auto& [id, tr] : forest.tracklets()) {
    Tracklet copy = tr;
    for (MaskRef& r : copy.refs) {
      const auto ti = static_cast<std::size_t>(r.t);
      out.at(ti).insert(frames.at(ti).at(r.label).with_label(id));
      r.label = id;
    }
    relabeled.put(std::move(copy));
  }
  frames = std::move(out);
  forest = std::move(relabeled);
}

} // namespace lineagetrack
