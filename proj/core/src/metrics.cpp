#include <lineagetrack/metrics.hpp>

#include <lineagetrack/error.hpp>

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

namespace lineagetrack {

void AogmWeights::validate() const {
  for (double v : {ns, fn, fp, ed, ea, ec})
    if (!(v >= 0.0)) throw Error("AOGM weights must be non-negative", "config");
  if (!(fn > 0.0)) throw Error("w_fn must be positive", "config");
}

namespace {

void check_disjoint(const DetectionSet& ds, const char* side) {
  for (const auto& [label, m] : ds.masks())
    for (int other : ds.overlapping(m))
      if (other != label)
        throw Error(std::string(side) + " masks " + std::to_string(label) + " and " + std::to_string(other) +
                        " overlap in frame " + std::to_string(ds.t()),
                    "overlap");
}

enum class EdgeKind { migration, division };

using Edge = std::pair<MaskRef, MaskRef>;

std::map<Edge, EdgeKind> edges_of(const LineageForest& forest) {
  std::map<Edge, EdgeKind> out;
  for (const auto& [id, tr] : forest.tracklets()) {
    for (std::size_t i = 1; i < tr.refs.size(); ++i) out[{tr.refs[i - 1], tr.refs[i]}] = EdgeKind::migration;
    if (tr.parent && forest.contains(*tr.parent) && !tr.refs.empty()) {
      const Tracklet& p = forest.at(*tr.parent);
      if (!p.refs.empty()) out[{p.refs.back(), tr.refs.front()}] = EdgeKind::division;
    }
  }
  return out;
}

void check_refs(const LineageForest& forest, const std::vector<DetectionSet>& frames, const char* side) {
  for (const auto& [id, tr] : forest.tracklets())
    for (const MaskRef& r : tr.refs)
      if (r.t < 0 || r.t >= static_cast<int>(frames.size()) || !frames[static_cast<std::size_t>(r.t)].contains(r.label))
        throw Error(std::string(side) + " tracklet " + std::to_string(id) + " references a missing mask at t=" +
                        std::to_string(r.t),
                    "dangling");
}

} // namespace

NodeMatching match_nodes(const std::vector<DetectionSet>& ref, const std::vector<DetectionSet>& comp) {
  if (ref.size() != comp.size())
    throw Error("reference has " + std::to_string(ref.size()) + " frames, result " + std::to_string(comp.size()), "shape");
  NodeMatching m;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    check_disjoint(comp[t], "result");
    const int ti = static_cast<int>(t);
    for (const auto& [label, mask] : comp[t].masks()) m.comp_to_ref[{ti, label}];
    for (const auto& [rl, r] : ref[t].masks()) {
      for (int cl : comp[t].overlapping(r)) {
        if (2 * intersection_size(r, comp[t].at(cl)) > r.size()) {
          m.comp_to_ref[{ti, cl}].push_back({ti, rl});
          m.ref_to_comp[{ti, rl}] = {ti, cl};
          break;
        }
      }
    }
  }
  return m;
}

AogmBreakdown aogm(const LineageForest& ref_forest, const std::vector<DetectionSet>& ref_frames,
                   const LineageForest& comp_forest, const std::vector<DetectionSet>& comp_frames,
                   const NodeMatching& matching, const AogmWeights& w) {
  w.validate();
  check_refs(ref_forest, ref_frames, "reference");
  check_refs(comp_forest, comp_frames, "result");
  AogmBreakdown b;
  AogmCounts& c = b.counts;

  std::int64_t n_ref = 0;
  for (const DetectionSet& ds : ref_frames) n_ref += static_cast<std::int64_t>(ds.size());
  c.fn = n_ref - static_cast<std::int64_t>(matching.ref_to_comp.size());
  for (const auto& [node, refs] : matching.comp_to_ref) {
    if (refs.empty()) ++c.fp;
    if (refs.size() >= 2) c.ns += static_cast<std::int64_t>(refs.size()) - 1;
  }

  const auto ref_edges = edges_of(ref_forest);
  const auto comp_edges = edges_of(comp_forest);
  std::set<Edge> comp_used;
  for (const auto& [e, kind] : ref_edges) {
    const auto a = matching.ref_to_comp.find(e.first);
    const auto z = matching.ref_to_comp.find(e.second);
    if (a == matching.ref_to_comp.end() || z == matching.ref_to_comp.end()) {
      ++c.ea;
      continue;
    }
    const auto it = comp_edges.find({a->second, z->second});
    if (it == comp_edges.end()) {
      ++c.ea;
      continue;
    }
    comp_used.insert(it->first);
    if (it->second != kind) ++c.ec;
  }
  c.ed = static_cast<std::int64_t>(comp_edges.size() - comp_used.size());

  b.edges = w.ed * static_cast<double>(c.ed) + w.ea * static_cast<double>(c.ea) + w.ec * static_cast<double>(c.ec);
  b.total = w.ns * static_cast<double>(c.ns) + w.fn * static_cast<double>(c.fn) + w.fp * static_cast<double>(c.fp) + b.edges;
  b.aogm0 = w.fn * static_cast<double>(n_ref) + w.ea * static_cast<double>(ref_edges.size());
  return b;
}

double tra(const AogmBreakdown& b) {
  if (!(b.aogm0 > 0.0)) throw Error("TRA needs a non-empty reference", "empty_reference");
  return 1.0 - std::min(b.total, b.aogm0) / b.aogm0;
}

double seg(const std::vector<DetectionSet>& ref, const std::vector<DetectionSet>& comp) {
  if (ref.size() != comp.size())
    throw Error("reference has " + std::to_string(ref.size()) + " frames, result " + std::to_string(comp.size()), "shape");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    for (const auto& [rl, r] : ref[t].masks()) {
      ++n;
      for (int cl : comp[t].overlapping(r)) {
        const OverlapStats s = mask_overlap_stats(r, comp[t].at(cl));
        if (2 * s.intersection > r.size()) {
          sum += s.iou;
          break;
        }
      }
    }
  }
  if (n == 0) throw Error("SEG needs at least one reference mask", "empty_reference");
  return sum / static_cast<double>(n);
}

EvalReport evaluate(const LineageForest& ref_forest, const std::vector<DetectionSet>& ref_frames,
                    const LineageForest& comp_forest, const std::vector<DetectionSet>& comp_frames, const AogmWeights& w) {
  EvalReport r;
  r.weights = w;
  r.aogm = aogm(ref_forest, ref_frames, comp_forest, comp_frames, match_nodes(ref_frames, comp_frames), w);
  r.tra = tra(r.aogm);
  r.seg = seg(ref_frames, comp_frames);
  return r;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "TRA=" << r.tra << '\n' << "SEG=" << r.seg << '\n';
  os << "AOGM=" << r.aogm.total << '\n' << "AOGM0=" << r.aogm.aogm0 << '\n' << "aogm_edges=" << r.aogm.edges << '\n';
  const AogmCounts& c = r.aogm.counts;
  os << "NS=" << c.ns << "\nFN=" << c.fn << "\nFP=" << c.fp << "\nED=" << c.ed << "\nEA=" << c.ea << "\nEC=" << c.ec << '\n';
  const AogmWeights& w = r.weights;
  os << "weights.ns=" << w.ns << "\nweights.fn=" << w.fn << "\nweights.fp=" << w.fp << "\nweights.ed=" << w.ed
     << "\nweights.ea=" << w.ea << "\nweights.ec=" << w.ec << '\n';
  os << "matching=overlap>0.5|R|\n";
  return os.str();
}

nlohmann::json report_json(const EvalReport& r) {
  const AogmCounts& c = r.aogm.counts;
  const AogmWeights& w = r.weights;
  return nlohmann::json{{"TRA", r.tra},
                        {"SEG", r.seg},
                        {"AOGM", r.aogm.total},
                        {"AOGM0", r.aogm.aogm0},
                        {"aogm_edges", r.aogm.edges},
                        {"NS", c.ns},
                        {"FN", c.fn},
                        {"FP", c.fp},
                        {"ED", c.ed},
                        {"EA", c.ea},
                        {"EC", c.ec},
                        {"weights.ns", w.ns},
                        {"weights.fn", w.fn},
                        {"weights.fp", w.fp},
                        {"weights.ed", w.ed},
                        {"weights.ea", w.ea},
                        {"weights.ec", w.ec},
                        {"matching", "overlap>0.5|R|"}};
}

} // namespace lineagetrack
