#include <lineagetrack/imgproc.hpp>

#include <lineagetrack/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

namespace lineagetrack::imgproc {

float otsu_threshold(std::span<const float> values) {
  if (values.empty()) return 0.0f;
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const float mn = *mn_it;
  const float mx = *mx_it;
  if (!(mx > mn)) return mx;

  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  std::array<float, kBins> bin_max;
  bin_max.fill(-std::numeric_limits<float>::infinity());
  const double scale = kBins / (static_cast<double>(mx) - static_cast<double>(mn));
  for (float v : values) {
    int b = static_cast<int>((static_cast<double>(v) - mn) * scale);
    b = std::clamp(b, 0, kBins - 1);
    hist[static_cast<std::size_t>(b)] += 1.0;
    bin_max[static_cast<std::size_t>(b)] = std::max(bin_max[static_cast<std::size_t>(b)], v);
  }

  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];

  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_k = 0;
  for (int k = 0; k < kBins - 1; ++k) {
    w0 += hist[static_cast<std::size_t>(k)];
    sum0 += k * hist[static_cast<std::size_t>(k)];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  float level = mn;
  for (int k = 0; k <= best_k; ++k) level = std::max(level, bin_max[static_cast<std::size_t>(k)]);
  return level;
}

Components label_components(std::span<const std::uint8_t> fg, const Shape& shape) {
  Components out;
  out.labels.assign(fg.size(), 0);
  const std::int64_t sx = 1, sy = shape.x, sz = static_cast<std::int64_t>(shape.x) * shape.y;
  std::deque<std::int64_t> queue;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(fg.size()); ++i) {
    if (!fg[static_cast<std::size_t>(i)] || out.labels[static_cast<std::size_t>(i)]) continue;
    const int id = ++out.count;
    out.labels[static_cast<std::size_t>(i)] = id;
    queue.push_back(i);
    while (!queue.empty()) {
      const std::int64_t p = queue.front();
      queue.pop_front();
      const int z = static_cast<int>(p / sz);
      const int y = static_cast<int>((p % sz) / sy);
      const int x = static_cast<int>(p % sy);
      const std::array<std::pair<bool, std::int64_t>, 6> nb{{
          {x > 0, p - sx}, {x + 1 < shape.x, p + sx},
          {y > 0, p - sy}, {y + 1 < shape.y, p + sy},
          {z > 0, p - sz}, {z + 1 < shape.z, p + sz},
      }};
      for (const auto& [ok, q] : nb) {
        if (!ok) continue;
        const auto qi = static_cast<std::size_t>(q);
        if (fg[qi] && !out.labels[qi]) {
          out.labels[qi] = id;
          queue.push_back(q);
        }
      }
    }
  }
  return out;
}

namespace {

// Squared-distance transform of a sampled function (Felzenszwalb & Huttenlocher).
void dt1d(const std::vector<double>& f, std::vector<double>& d, double w2) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  int first = -1;
  for (int q = 0; q < n; ++q)
    if (std::isfinite(f[static_cast<std::size_t>(q)])) {
      first = q;
      break;
    }
  d.assign(static_cast<std::size_t>(n), inf);
  if (first < 0) return;
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (int q = first + 1; q < n; ++q) {
    const double fq = f[static_cast<std::size_t>(q)];
    if (!std::isfinite(fq)) continue;
    double s;
    while (true) {
      const int vk = v[static_cast<std::size_t>(k)];
      s = ((fq + w2 * q * q) - (f[static_cast<std::size_t>(vk)] + w2 * vk * vk)) / (2.0 * w2 * (q - vk));
      if (s <= z[static_cast<std::size_t>(k)] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int vk = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] = w2 * (q - vk) * (q - vk) + f[static_cast<std::size_t>(vk)];
  }
}

} // namespace

std::vector<float> distance_transform(std::span<const std::uint8_t> fg, const Shape& shape, const Spacing& spacing) {
  // Work on a grid padded by one background voxel per side.
  const Shape p{shape.z + 2, shape.y + 2, shape.x + 2};
  const auto idx = [&](int z, int y, int x) {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(p.y) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(p.x) +
           static_cast<std::size_t>(x);
  };
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(static_cast<std::size_t>(p.count()), 0.0);
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x)
        if (fg[(static_cast<std::size_t>(z) * static_cast<std::size_t>(shape.y) + static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(shape.x) +
               static_cast<std::size_t>(x)])
          g[idx(z + 1, y + 1, x + 1)] = inf;

  std::vector<double> f, d;
  const bool planar = shape.z == 1;
  // x
  for (int z = 0; z < p.z; ++z)
    for (int y = 0; y < p.y; ++y) {
      f.assign(static_cast<std::size_t>(p.x), 0.0);
      for (int x = 0; x < p.x; ++x) f[static_cast<std::size_t>(x)] = g[idx(z, y, x)];
      dt1d(f, d, spacing.x * spacing.x);
      for (int x = 0; x < p.x; ++x) g[idx(z, y, x)] = d[static_cast<std::size_t>(x)];
    }
  // y
  for (int z = 0; z < p.z; ++z)
    for (int x = 0; x < p.x; ++x) {
      f.assign(static_cast<std::size_t>(p.y), 0.0);
      for (int y = 0; y < p.y; ++y) f[static_cast<std::size_t>(y)] = g[idx(z, y, x)];
      dt1d(f, d, spacing.y * spacing.y);
      for (int y = 0; y < p.y; ++y) g[idx(z, y, x)] = d[static_cast<std::size_t>(y)];
    }
  // z (a planar image is not bounded by background above and below)
  if (!planar) {
    for (int y = 0; y < p.y; ++y)
      for (int x = 0; x < p.x; ++x) {
        f.assign(static_cast<std::size_t>(p.z), 0.0);
        for (int z = 0; z < p.z; ++z) f[static_cast<std::size_t>(z)] = g[idx(z, y, x)];
        dt1d(f, d, spacing.z * spacing.z);
        for (int z = 0; z < p.z; ++z) g[idx(z, y, x)] = d[static_cast<std::size_t>(z)];
      }
  }

  std::vector<float> out(static_cast<std::size_t>(shape.count()), 0.0f);
  std::size_t i = 0;
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x, ++i)
        out[i] = static_cast<float>(std::sqrt(g[idx(planar ? 1 : z + 1, y + 1, x + 1)]));
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// axis: 0 = z, 1 = y, 2 = x
void convolve_axis(Volume& v, int axis, const std::vector<double>& k) {
  const Shape s = v.shape();
  const int n = axis == 0 ? s.z : (axis == 1 ? s.y : s.x);
  if (n == 1) return;
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<float> line(static_cast<std::size_t>(n));
  const int a_max = axis == 0 ? s.y : s.z;
  const int b_max = axis == 2 ? s.y : s.x;
  for (int a = 0; a < a_max; ++a)
    for (int b = 0; b < b_max; ++b) {
      auto coord = [&](int i) -> Coord {
        if (axis == 0) return {i, a, b};
        if (axis == 1) return {a, i, b};
        return {a, b, i};
      };
      for (int i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = v.at(coord(i));
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = -radius; j <= radius; ++j)
          acc += k[static_cast<std::size_t>(j + radius)] * line[static_cast<std::size_t>(reflect(i + j, n))];
        v.at(coord(i)) = static_cast<float>(acc);
      }
    }
}

} // namespace

Volume gaussian_blur(const Volume& v, double sigma_z, double sigma_y, double sigma_x) {
  Volume out = v;
  if (sigma_x > 0) convolve_axis(out, 2, gaussian_kernel(sigma_x));
  if (sigma_y > 0) convolve_axis(out, 1, gaussian_kernel(sigma_y));
  if (sigma_z > 0 && v.shape().z > 1) convolve_axis(out, 0, gaussian_kernel(sigma_z));
  return out;
}

Volume negative_log(const Volume& v, double sigma, const Spacing& spacing) {
  // z is resampled to the in-plane unit: sigma_z in pixels and the z second
  // derivative both account for the spacing ratio.
  const double ratio = spacing.z / spacing.y;
  const Volume g = gaussian_blur(v, sigma / ratio, sigma, sigma);
  Volume out(v.shape(), Dtype::f32, v.ndim(), v.t());
  const Shape s = v.shape();
  const double s2 = sigma * sigma;
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const double c = g.at({z, y, x});
        double lap = 0.0;
        lap += g.at({z, reflect(y - 1, s.y), x}) + g.at({z, reflect(y + 1, s.y), x}) - 2.0 * c;
        lap += g.at({z, y, reflect(x - 1, s.x)}) + g.at({z, y, reflect(x + 1, s.x)}) - 2.0 * c;
        if (s.z > 1) lap += (g.at({reflect(z - 1, s.z), y, x}) + g.at({reflect(z + 1, s.z), y, x}) - 2.0 * c) / (ratio * ratio);
        out.at({z, y, x}) = static_cast<float>(-s2 * lap);
      }
  return out;
}

InstanceMask component_mask(const Components& c, int id, const Shape& shape, int label, int t) {
  std::vector<Run> runs;
  std::size_t i = 0;
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x, ++i) {
        if (c.labels[i] != id) continue;
        if (!runs.empty() && runs.back().z == z && runs.back().y == y && runs.back().x_end() == x) {
          ++runs.back().length;
        } else {
          runs.push_back({z, y, x, 1});
        }
      }
  return InstanceMask::from_runs(label, t, std::move(runs));
}

DetectionSet masks_from_labels(std::span<const std::int32_t> labels, const Shape& shape, int t) {
  if (static_cast<std::int64_t>(labels.size()) != shape.count()) throw Error("label grid size mismatch", "shape");
  std::map<int, std::vector<Run>> runs;
  std::size_t i = 0;
  for (int z = 0; z < shape.z; ++z)
    for (int y = 0; y < shape.y; ++y)
      for (int x = 0; x < shape.x; ++x, ++i) {
        const int l = labels[i];
        if (l == 0) continue;
        if (l < 0) throw Error("negative label in label image", "labels");
        auto& r = runs[l];
        if (!r.empty() && r.back().z == z && r.back().y == y && r.back().x_end() == x) {
          ++r.back().length;
        } else {
          r.push_back({z, y, x, 1});
        }
      }
  DetectionSet ds(t);
  for (auto& [l, r] : runs) ds.insert(InstanceMask::from_runs(l, t, std::move(r)));
  return ds;
}

std::vector<std::int32_t> labels_from_masks(const DetectionSet& ds, const Shape& shape) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(shape.count()), 0);
  for (const auto& [label, m] : ds.masks())
    for (const Run& r : m.runs()) {
      if (!shape.contains({r.z, r.y, r.x0}) || !shape.contains({r.z, r.y, r.x_end() - 1}))
        throw Error("mask exceeds grid", "shape");
      const std::size_t base = (static_cast<std::size_t>(r.z) * static_cast<std::size_t>(shape.y) + static_cast<std::size_t>(r.y)) *
                               static_cast<std::size_t>(shape.x);
      for (int x = r.x0; x < r.x_end(); ++x) out[base + static_cast<std::size_t>(x)] = label;
    }
  return out;
}

} // namespace lineagetrack::imgproc
