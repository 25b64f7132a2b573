#include <lineagetrack/mask.hpp>

#include <lineagetrack/error.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace lineagetrack {

namespace {

bool same_row(const Run& a, const Run& b) { return a.z == b.z && a.y == b.y; }

bool row_less(const Run& a, const Run& b) { return a.z != b.z ? a.z < b.z : a.y < b.y; }

std::vector<Run> normalize_runs(std::vector<Run> runs) {
  std::erase_if(runs, [](const Run& r) { return r.length <= 0; });
  std::sort(runs.begin(), runs.end());
  std::vector<Run> out;
  out.reserve(runs.size());
  for (const Run& r : runs) {
    if (!out.empty() && same_row(out.back(), r) && r.x0 <= out.back().x_end()) {
      out.back().length = std::max(out.back().x_end(), r.x_end()) - out.back().x0;
    } else {
      out.push_back(r);
    }
  }
  return out;
}

} // namespace

InstanceMask InstanceMask::from_voxels(int label, int t, std::vector<Coord> voxels) {
  std::sort(voxels.begin(), voxels.end());
  voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());
  std::vector<Run> runs;
  for (const Coord& c : voxels) {
    if (!runs.empty() && runs.back().z == c.z && runs.back().y == c.y && runs.back().x_end() == c.x) {
      ++runs.back().length;
    } else {
      runs.push_back({c.z, c.y, c.x, 1});
    }
  }
  InstanceMask m;
  m.label_ = label;
  m.t_ = t;
  m.runs_ = std::move(runs);
  m.finalize();
  return m;
}

InstanceMask InstanceMask::from_runs(int label, int t, std::vector<Run> runs) {
  InstanceMask m;
  m.label_ = label;
  m.t_ = t;
  m.runs_ = normalize_runs(std::move(runs));
  m.finalize();
  return m;
}

void InstanceMask::finalize() {
  size_ = 0;
  double sz = 0.0, sy = 0.0, sx = 0.0;
  Coord lo{0, 0, 0}, hi{0, 0, 0};
  bool first = true;
  for (const Run& r : runs_) {
    const auto n = static_cast<double>(r.length);
    size_ += r.length;
    sz += n * r.z;
    sy += n * r.y;
    // sum of x0 .. x0 + n - 1
    sx += n * r.x0 + n * (n - 1.0) / 2.0;
    if (first) {
      lo = {r.z, r.y, r.x0};
      hi = {r.z + 1, r.y + 1, r.x_end()};
      first = false;
    } else {
      lo = {std::min(lo.z, r.z), std::min(lo.y, r.y), std::min(lo.x, r.x0)};
      hi = {std::max(hi.z, r.z + 1), std::max(hi.y, r.y + 1), std::max(hi.x, r.x_end())};
    }
  }
  if (size_ > 0) {
    const auto n = static_cast<double>(size_);
    centroid_ = {sz / n, sy / n, sx / n};
  } else {
    centroid_ = {};
  }
  bbox_ = {lo, hi};
}

bool InstanceMask::contains(const Coord& c) const {
  const Run probe{c.z, c.y, c.x, std::numeric_limits<int>::max()};
  auto it = std::upper_bound(runs_.begin(), runs_.end(), probe);
  if (it == runs_.begin()) return false;
  --it;
  return it->z == c.z && it->y == c.y && c.x >= it->x0 && c.x < it->x_end();
}

std::vector<Coord> InstanceMask::voxels() const {
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(size_));
  for (const Run& r : runs_)
    for (int x = r.x0; x < r.x_end(); ++x) out.push_back({r.z, r.y, x});
  return out;
}

std::int64_t InstanceMask::slice_area(int z) const {
  std::int64_t n = 0;
  for (const Run& r : runs_)
    if (r.z == z) n += r.length;
  return n;
}

std::vector<int> InstanceMask::slices() const {
  std::vector<int> zs;
  for (const Run& r : runs_)
    if (zs.empty() || zs.back() != r.z) zs.push_back(r.z);
  return zs;
}

InstanceMask InstanceMask::slice(int z) const {
  std::vector<Run> keep;
  for (const Run& r : runs_)
    if (r.z == z) keep.push_back(r);
  InstanceMask m;
  m.label_ = label_;
  m.t_ = t_;
  m.runs_ = std::move(keep);
  m.finalize();
  return m;
}

bool InstanceMask::touches_xy_border(const Shape& grid) const {
  if (empty()) return false;
  return bbox_.lo.y <= 0 || bbox_.lo.x <= 0 || bbox_.hi.y >= grid.y || bbox_.hi.x >= grid.x;
}

InstanceMask InstanceMask::with_label(int label) const {
  InstanceMask m = *this;
  m.label_ = label;
  return m;
}

InstanceMask InstanceMask::with_t(int t) const {
  InstanceMask m = *this;
  m.t_ = t;
  return m;
}

InstanceMask InstanceMask::translated(const Coord& d) const {
  InstanceMask m = *this;
  for (Run& r : m.runs_) {
    r.z += d.z;
    r.y += d.y;
    r.x0 += d.x;
  }
  m.finalize();
  return m;
}

InstanceMask InstanceMask::minus(const InstanceMask& other) const {
  if (other.empty() || empty() || !bbox_.intersects(other.bbox_)) return *this;
  std::vector<Run> out;
  std::size_t j = 0;
  const auto& b = other.runs_;
  for (const Run& r : runs_) {
    while (j < b.size() && row_less(b[j], r)) ++j;
    int cursor = r.x0;
    for (std::size_t k = j; k < b.size() && same_row(b[k], r); ++k) {
      if (b[k].x_end() <= cursor) continue;
      if (b[k].x0 >= r.x_end()) break;
      if (b[k].x0 > cursor) out.push_back({r.z, r.y, cursor, b[k].x0 - cursor});
      cursor = std::max(cursor, b[k].x_end());
    }
    if (cursor < r.x_end()) out.push_back({r.z, r.y, cursor, r.x_end() - cursor});
  }
  InstanceMask m;
  m.label_ = label_;
  m.t_ = t_;
  m.runs_ = normalize_runs(std::move(out));
  m.finalize();
  return m;
}

InstanceMask InstanceMask::clipped(const Box& box) const {
  std::vector<Run> out;
  for (const Run& r : runs_) {
    if (r.z < box.lo.z || r.z >= box.hi.z || r.y < box.lo.y || r.y >= box.hi.y) continue;
    const int a = std::max(r.x0, box.lo.x);
    const int e = std::min(r.x_end(), box.hi.x);
    if (e > a) out.push_back({r.z, r.y, a, e - a});
  }
  InstanceMask m;
  m.label_ = label_;
  m.t_ = t_;
  m.runs_ = std::move(out);
  m.finalize();
  return m;
}

std::int64_t intersection_size(const InstanceMask& a, const InstanceMask& b) {
  if (a.empty() || b.empty() || !a.bbox().intersects(b.bbox())) return 0;
  const auto ra = a.runs();
  const auto rb = b.runs();
  std::size_t i = 0, j = 0;
  std::int64_t n = 0;
  while (i < ra.size() && j < rb.size()) {
    if (row_less(ra[i], rb[j])) {
      ++i;
    } else if (row_less(rb[j], ra[i])) {
      ++j;
    } else {
      const int lo = std::max(ra[i].x0, rb[j].x0);
      const int hi = std::min(ra[i].x_end(), rb[j].x_end());
      if (hi > lo) n += hi - lo;
      if (ra[i].x_end() < rb[j].x_end()) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return n;
}

OverlapStats mask_overlap_stats(const InstanceMask& a, const InstanceMask& b) {
  OverlapStats s;
  s.intersection = intersection_size(a, b);
  s.union_size = a.size() + b.size() - s.intersection;
  if (s.union_size > 0) s.iou = static_cast<double>(s.intersection) / static_cast<double>(s.union_size);
  const std::int64_t smaller = std::min(a.size(), b.size());
  if (smaller > 0) s.frac_of_smaller = static_cast<double>(s.intersection) / static_cast<double>(smaller);
  return s;
}

double equivalent_diameter(const InstanceMask& m) {
  std::int64_t best = 0;
  for (int z : m.slices()) best = std::max(best, m.slice_area(z));
  return 2.0 * std::sqrt(static_cast<double>(best) / std::numbers::pi);
}

} // namespace lineagetrack
