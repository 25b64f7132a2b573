#include <lineagetrack/oracle_backend.hpp>

#include <lineagetrack/error.hpp>
#include <lineagetrack/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <tuple>

namespace lineagetrack {

void validate_prompts(const PromptSet& p, const Shape& shape) {
  if (shape.z != 1) throw BackendError("malformed prompts: prompts require a planar patch", "bad_prompt");
  const Box patch = full_box(shape);
  if (p.box.empty() || p.box.lo.z != 0 || p.box.hi.z != 1 || p.box.intersect(patch) != p.box)
    throw BackendError("malformed prompts: box must be non-empty and inside the patch", "bad_prompt");
  for (const auto* pts : {&p.positive, &p.negative})
    for (const Coord& c : *pts)
      if (!shape.contains(c)) throw BackendError("malformed prompts: point outside the patch", "bad_prompt");
}

namespace {

// Otsu foreground component with the largest box overlap. Ties prefer more
// positive points, fewer negative points, then the earlier component.
InstanceMask select_component(const Volume& patch, const Box& box, const std::vector<Coord>& positive,
                              const std::vector<Coord>& negative) {
  const auto data = patch.data();
  const float level = imgproc::otsu_threshold(data);
  std::vector<std::uint8_t> fg(data.size());
  bool any = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    fg[i] = data[i] > level ? 1 : 0;
    any = any || fg[i];
  }
  if (!any) return {};
  const auto comps = imgproc::label_components(fg, patch.shape());

  std::vector<std::int64_t> overlap(static_cast<std::size_t>(comps.count) + 1, 0);
  const Box b = box.intersect(full_box(patch.shape()));
  for (int z = b.lo.z; z < b.hi.z; ++z)
    for (int y = b.lo.y; y < b.hi.y; ++y)
      for (int x = b.lo.x; x < b.hi.x; ++x) ++overlap[static_cast<std::size_t>(comps.labels[patch.index({z, y, x})])];
  std::vector<int> pos(overlap.size(), 0), neg(overlap.size(), 0);
  for (const Coord& c : positive)
    if (patch.shape().contains(c)) ++pos[static_cast<std::size_t>(comps.labels[patch.index(c)])];
  for (const Coord& c : negative)
    if (patch.shape().contains(c)) ++neg[static_cast<std::size_t>(comps.labels[patch.index(c)])];

  int best = 0;
  for (int id = 1; id <= comps.count; ++id) {
    const auto i = static_cast<std::size_t>(id);
    if (overlap[i] == 0) continue;
    if (best == 0) {
      best = id;
      continue;
    }
    const auto bi = static_cast<std::size_t>(best);
    if (std::tuple(overlap[i], pos[i], -neg[i]) > std::tuple(overlap[bi], pos[bi], -neg[bi])) best = id;
  }
  if (best == 0) return {};
  return imgproc::component_mask(comps, best, patch.shape());
}

void validate_box(const Box& box, const Shape& shape) {
  if (box.empty() || box.intersect(full_box(shape)) != box) throw BackendError("degenerate box prompt", "bad_prompt");
}

} // namespace

InstanceMask OracleBackend::propagate(const Volume& reference, const Volume& target, const PromptSet& prompts) const {
  if (reference.shape() != target.shape()) throw BackendError("patch shapes differ", "bad_tensor");
  validate_prompts(prompts, target.shape());
  return select_component(target, prompts.box, prompts.positive, prompts.negative);
}

EmbedResult OracleBackend::embed(const Volume& patch, const Box& box) const {
  validate_box(box, patch.shape());
  InstanceMask mask = select_component(patch, box, {}, {});
  if (mask.empty()) {
    std::vector<Run> runs;
    for (int z = box.lo.z; z < box.hi.z; ++z)
      for (int y = box.lo.y; y < box.hi.y; ++y) runs.push_back({z, y, box.lo.x, box.hi.x - box.lo.x});
    mask = InstanceMask::from_runs(1, 0, std::move(runs));
  }

  const auto data = patch.data();
  const auto [mn_it, mx_it] = std::minmax_element(data.begin(), data.end());
  const double lo = *mn_it;
  const double range = *mx_it > *mn_it ? static_cast<double>(*mx_it) - lo : 1.0;
  auto norm = [&](float v) { return (static_cast<double>(v) - lo) / range; };

  // Appearance block.
  const int bins = options_.histogram_bins;
  std::vector<double> app(static_cast<std::size_t>(bins) + 6, 0.0);
  double sum_in = 0, sq_in = 0, n_in = 0, sum_out = 0, sq_out = 0, n_out = 0;
  double my = 0, mx = 0;
  const Shape s = patch.shape();
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const double v = norm(patch.at({z, y, x}));
        if (mask.contains({z, y, x})) {
          const int b = std::clamp(static_cast<int>(v * bins), 0, bins - 1);
          app[static_cast<std::size_t>(b)] += 1.0;
          sum_in += v;
          sq_in += v * v;
          n_in += 1;
          my += y;
          mx += x;
        } else {
          sum_out += v;
          sq_out += v * v;
          n_out += 1;
        }
      }
  for (int b = 0; b < bins; ++b) app[static_cast<std::size_t>(b)] /= std::max(1.0, n_in);
  my /= std::max(1.0, n_in);
  mx /= std::max(1.0, n_in);
  double cyy = 0, cxx = 0, cxy = 0;
  for (const Coord& c : mask.voxels()) {
    cyy += (c.y - my) * (c.y - my);
    cxx += (c.x - mx) * (c.x - mx);
    cxy += (c.y - my) * (c.x - mx);
  }
  const double tr = cyy + cxx;
  const double disc = std::sqrt(std::max(0.0, (cyy - cxx) * (cyy - cxx) + 4 * cxy * cxy));
  const double l1 = 0.5 * (tr + disc), l2 = 0.5 * (tr - disc);
  const double ecc = l1 > 0 ? std::sqrt(std::max(0.0, 1.0 - l2 / l1)) : 0.0;
  const auto box_area = static_cast<double>(box.extent().count());
  const double mean_in = sum_in / std::max(1.0, n_in);
  const double mean_out = sum_out / std::max(1.0, n_out);
  std::size_t k = static_cast<std::size_t>(bins);
  app[k++] = std::min(2.0, n_in / box_area);
  app[k++] = ecc;
  app[k++] = mean_in;
  app[k++] = std::sqrt(std::max(0.0, sq_in / std::max(1.0, n_in) - mean_in * mean_in));
  app[k++] = mean_out;
  app[k++] = std::sqrt(std::max(0.0, sq_out / std::max(1.0, n_out) - mean_out * mean_out));

  // Layout block: coarse grid of cell means, mean-centred.
  const int g = options_.context_grid;
  std::vector<double> ctx(static_cast<std::size_t>(g * g), 0.0), cnt(ctx.size(), 0.0);
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) {
        const auto cell = static_cast<std::size_t>((y * g / s.y) * g + (x * g / s.x));
        ctx[cell] += norm(patch.at({z, y, x}));
        cnt[cell] += 1;
      }
  double ctx_mean = 0;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    ctx[i] /= std::max(1.0, cnt[i]);
    ctx_mean += ctx[i];
  }
  ctx_mean /= static_cast<double>(ctx.size());
  for (double& v : ctx) v -= ctx_mean;

  auto normalize = [](std::vector<double>& v) {
    double n2 = 0;
    for (double a : v) n2 += a * a;
    if (n2 > 0)
      for (double& a : v) a /= std::sqrt(n2);
  };
  normalize(app);
  normalize(ctx);
  const double wa = std::sqrt(1.0 - options_.context_weight);
  const double wc = std::sqrt(options_.context_weight);

  EmbedResult out;
  out.mask = std::move(mask);
  out.feature.values.reserve(app.size() + ctx.size());
  for (double a : app) out.feature.values.push_back(static_cast<float>(wa * a));
  for (double c : ctx) out.feature.values.push_back(static_cast<float>(wc * c));
  return out;
}

Segment3dResult OracleBackend::segment3d(const Volume& patch, const Coord& click) const {
  const Shape s = patch.shape();
  if (!s.contains(click)) throw BackendError("click outside the patch", "bad_prompt");
  const auto data = patch.data();
  const float level = imgproc::otsu_threshold(data);
  Segment3dResult out;
  if (!(patch.at(click) > level)) {
    out.empty = true;
    return out;
  }

  std::vector<std::uint8_t> fg(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) fg[i] = data[i] > level ? 1 : 0;
  const auto comps = imgproc::label_components(fg, s);
  const int own = comps.labels[patch.index(click)];
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = comps.labels[i] == own ? 1 : 0;

  const auto dist = imgproc::distance_transform(fg, s, patch.spacing());
  float dmax = 0;
  for (std::size_t i = 0; i < fg.size(); ++i)
    if (fg[i]) dmax = std::max(dmax, dist[i]);
  std::vector<std::uint8_t> core(fg.size(), 0);
  for (std::size_t i = 0; i < fg.size(); ++i)
    core[i] = fg[i] && dist[i] > options_.marker_fraction * dmax ? 1 : 0;
  const auto markers = imgproc::label_components(core, s);

  // Priority flood from the markers, highest distance first.
  std::vector<std::int32_t> basin(fg.size(), 0);
  using Item = std::pair<float, std::int64_t>;
  auto cmp = [](const Item& a, const Item& b) { return a.first != b.first ? a.first < b.first : a.second > b.second; };
  std::priority_queue<Item, std::vector<Item>, decltype(cmp)> heap(cmp);
  for (std::size_t i = 0; i < fg.size(); ++i)
    if (markers.labels[i]) {
      basin[i] = markers.labels[i];
      heap.emplace(dist[i], static_cast<std::int64_t>(i));
    }
  const std::int64_t sy = s.x, sz = static_cast<std::int64_t>(s.x) * s.y;
  while (!heap.empty()) {
    const auto [d, p] = heap.top();
    heap.pop();
    const int z = static_cast<int>(p / sz);
    const int y = static_cast<int>((p % sz) / sy);
    const int x = static_cast<int>(p % sy);
    const std::pair<bool, std::int64_t> nb[6] = {{x > 0, p - 1},      {x + 1 < s.x, p + 1}, {y > 0, p - sy},
                                                  {y + 1 < s.y, p + sy}, {z > 0, p - sz},     {z + 1 < s.z, p + sz}};
    for (const auto& [ok, q] : nb) {
      const auto qi = static_cast<std::size_t>(q);
      if (!ok || !fg[qi] || basin[qi]) continue;
      basin[qi] = basin[static_cast<std::size_t>(p)];
      heap.emplace(dist[qi], q);
    }
  }
  imgproc::Components keep{std::move(basin), markers.count};
  const int mine = keep.labels[patch.index(click)];
  out.mask = imgproc::component_mask(keep, mine, s);
  return out;
}

} // namespace lineagetrack
