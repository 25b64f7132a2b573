#include "cli.hpp"

#include "curation.hpp"
#include "pipeline.hpp"

#include <lineagetrack/dataset.hpp>
#include <lineagetrack/error.hpp>
#include <lineagetrack/metrics.hpp>
#include <lineagetrack/oracle_backend.hpp>
#include <lineagetrack/synth.hpp>
#include <lineagetrack/wire.hpp>

#include <CLI11.hpp>
#include <httplib.h>

#include <fstream>
#include <iostream>
#include <optional>

namespace lineagetrack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

struct Globals {
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::string backend = "oracle";
  double timeout_s = 120.0;
};

ExecutionOptions exec_options(const Globals& g) {
  ExecutionOptions e;
  e.workers = g.workers;
  e.seed = g.seed.value_or(0);
  return e;
}

void add_link_flags(CLI::App& cmd, LinkConfig& c) {
  cmd.add_option("--d", c.d, "Patch side in pixels (even; 0 = from seed mask size)");
  cmd.add_option("--theta-link", c.theta_link, "Minimum overlap (of the smaller mask) for a link");
  cmd.add_option("--theta-small", c.theta_small, "Predicted/source area ratio below which a track ends");
  cmd.add_option("--theta-conflict", c.theta_conflict, "IoU with an existing mask that blocks recovery");
  cmd.add_option("--n-pos", c.n_pos, "Positive prompt points");
  cmd.add_option("--n-neg", c.n_neg, "Negative prompt points");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cell lineage tracking with promptable segmentation backends", "lineagetrack"};
  app.set_version_flag("--version", LINEAGETRACK_VERSION);
  app.set_config("--config", "", "Options file (TOML/INI key = value, [mode] sections); flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Run seed (synth: overrides the preset's seed)");
  app.add_option("--backend", g.backend, "oracle or a model-server URL");
  app.add_option("--timeout", g.timeout_s, "Per-request timeout for remote backends (s)")->check(CLI::PositiveNumber);

  // synth
  std::string preset;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset with ground truth");
  synth->add_option("--preset", preset, "Scenario preset")->required()->check(CLI::IsMember(synth_preset_names()));
  synth->add_option("--out", synth_out, "Output directory")->required();

  // link
  LinkRun link_run;
  fs::path link_seeds;
  auto* link = app.add_subcommand("link", "Backward linking of pre-segmented masks");
  link->add_option("--data", link_run.data, "Dataset directory (t###.tif or raw.zarr)")->required();
  link->add_option("--masks", link_run.masks, "Pre-segmented masks (default <data>/seg)");
  link->add_option("--seeds", link_seeds, "Label image replacing the final frame's masks");
  link->add_option("--out", link_run.out, "Result directory")->required();
  add_link_flags(*link, link_run.cfg);
  bool no_border_retry = false;
  link->add_flag("--no-border-retry", no_border_retry, "Do not retry predictions that touch the patch border");

  // track3d
  TrackRun track_run;
  fs::path centers_path, seeds_path;
  bool detect = false;
  std::string embed_backend, segment_backend;
  auto* track = app.add_subcommand("track3d", "Forward seed-based tracking");
  track->add_option("--data", track_run.data, "Dataset directory (raw.zarr or t###.tif)")->required();
  track->add_option("--centers", centers_path, "Per-frame centers (default <data>/centers.txt)");
  track->add_flag("--detect", detect, "Detect centers instead of reading them");
  track->add_option("--seeds", seeds_path, "Frame-0 seed points (default <data>/seeds.txt)");
  track->add_option("--out", track_run.out, "Result directory")->required();
  track->add_option("--tau", track_run.cfg.tau, "Candidate radius in pixels (0 = 2 x median seed diameter)");
  track->add_option("--s-link", track_run.cfg.s_link, "Similarity needed for a link");
  track->add_option("--delta-mitosis", track_run.cfg.delta_mitosis, "Top-2 similarity gap below which a cell divides");
  track->add_option("--d", track_run.cfg.d, "Embedding patch side (even; 0 = from seed mask size)");
  track->add_option("--z-weight", track_run.cfg.z_weight, "Weight of z offsets in candidate distance (0 = spacing ratio)");
  track->add_option("--theta-small", track_run.cfg.link.theta_small, "Recovery: minimum predicted/source area ratio");
  track->add_option("--theta-conflict", track_run.cfg.link.theta_conflict, "Recovery: IoU that blocks a recovered mask");
  track->add_option("--min-sigma", track_run.detect.min_sigma, "Detector: smallest blob scale");
  track->add_option("--max-sigma", track_run.detect.max_sigma, "Detector: largest blob scale");
  track->add_option("--threshold", track_run.detect.threshold, "Detector: response threshold on [0,1]-scaled frames");
  track->add_option("--embed-backend", embed_backend, "Backend for embeddings and recovery (default --backend)");
  track->add_option("--segment-backend", segment_backend, "Backend for 3D masks (default --backend)");

  // eval
  fs::path ref_dir, res_dir, eval_out;
  AogmWeights weights;
  auto* eval = app.add_subcommand("eval", "Score a result against a reference");
  eval->add_option("--ref", ref_dir, "Reference (a dataset root with gt/, or a directory with man_track.txt)")->required();
  eval->add_option("--res", res_dir, "Result directory")->required();
  eval->add_option("--out", eval_out, "Where metrics.txt and metrics.json go (default --res)");
  eval->add_option("--w-ns", weights.ns, "Weight of split nodes");
  eval->add_option("--w-fn", weights.fn, "Weight of missing nodes");
  eval->add_option("--w-fp", weights.fp, "Weight of spurious nodes");
  eval->add_option("--w-ed", weights.ed, "Weight of redundant edges");
  eval->add_option("--w-ea", weights.ea, "Weight of missing edges");
  eval->add_option("--w-ec", weights.ec, "Weight of edges with the wrong semantics");

  // serve
  CurationOptions serve_opts;
  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Curation HTTP API over a dataset");
  serve->add_option("--data", serve_opts.data, "Dataset directory")->required();
  serve->add_option("--out", serve_opts.out, "Directory for run results")->required();
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port")->check(CLI::Range(1, 65535));

  // backend-serve
  std::int64_t max_voxels = 0;
  std::string backend_host = "127.0.0.1";
  int backend_port = 8600;
  auto* backend_serve = app.add_subcommand("backend-serve", "Serve the oracle backend over the model-server protocol");
  backend_serve->add_option("--host", backend_host, "Listen address");
  backend_serve->add_option("--port", backend_port, "Listen port")->check(CLI::Range(1, 65535));
  backend_serve->add_option("--max-voxels", max_voxels, "Largest accepted patch (0 = unlimited)");

  // CLI11 would report a stray positional as a missing subcommand.
  if (args.size() > 1 && !args[1].empty() && args[1][0] != '-' && !app.get_subcommand_no_throw(args[1])) {
    err << "error: code=usage message=unknown mode '" << one_line(args[1]) << "'\n";
    return kExitUsage;
  }

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << LINEAGETRACK_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: code=usage message=" << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      SynthScenario s = synth_preset(preset);
      if (g.seed) s.seed = *g.seed;
      const SynthData d = synth_generate(s);
      write_synth(synth_out, s, d);
      out << "synth: " << s.name << " frames=" << s.n_frames << " tracklets=" << d.gt_forest.size() << " out=" << synth_out.string()
          << "\n";
      return kExitOk;
    }

    if (link->parsed()) {
      if (!link_seeds.empty()) link_run.seeds = link_seeds;
      link_run.cfg.retry_on_patch_border = !no_border_retry;
      link_run.cfg.validate();
      const auto backend = make_backend(g.backend, g.timeout_s);
      json config = {{"data", link_run.data.string()},
                     {"masks", (link_run.masks.empty() ? link_run.data / "seg" : link_run.masks).string()},
                     {"seeds", link_run.seeds ? json(link_run.seeds->string()) : json(nullptr)},
                     {"backend", g.backend},
                     {"workers", g.workers},
                     {"seed", g.seed.value_or(0)},
                     {"link", link_config_json(link_run.cfg)}};
      write_manifest(link_run.out, "link", config);
      const LinkResult r = run_link(link_run, *backend, exec_options(g));
      out << "link: tracklets=" << r.forest.size() << " linked=" << r.stats.linked << " recovered=" << r.stats.recovered
          << " divisions=" << r.stats.divisions << " terminated=" << r.stats.terminated << "\n";
      return kExitOk;
    }

    if (track->parsed()) {
      track_run.cfg.validate();
      const auto frames = open_frames(track_run.data);
      if (!detect) track_run.centers = centers_path.empty() ? track_run.data / "centers.txt" : centers_path;
      const fs::path seeds_file = seeds_path.empty() ? track_run.data / "seeds.txt" : seeds_path;
      track_run.seeds = read_seeds(seeds_file, frames->ndim());
      const std::string embed_spec = embed_backend.empty() ? g.backend : embed_backend;
      const std::string segment_spec = segment_backend.empty() ? g.backend : segment_backend;
      const auto embedder = make_backend(embed_spec, g.timeout_s);
      const auto segmenter = make_backend(segment_spec, g.timeout_s);
      json config = {{"data", track_run.data.string()},
                     {"centers", track_run.centers ? json(track_run.centers->string()) : json("detect")},
                     {"seeds", seeds_file.string()},
                     {"embed_backend", embed_spec},
                     {"segment_backend", segment_spec},
                     {"workers", g.workers},
                     {"seed", g.seed.value_or(0)},
                     {"tracker", tracker_config_json(track_run.cfg)}};
      if (detect)
        config["detect"] = {{"min_sigma", track_run.detect.min_sigma},
                            {"max_sigma", track_run.detect.max_sigma},
                            {"threshold", track_run.detect.threshold}};
      write_manifest(track_run.out, "track3d", config);
      const ForwardResult r = run_track3d(track_run, *frames, *embedder, *segmenter, exec_options(g));
      out << "track3d: tracklets=" << r.forest.size() << " links=" << r.stats.links << " divisions=" << r.stats.divisions
          << " recovered=" << r.stats.recovered << " terminated=" << r.stats.terminated
          << " discarded_centers=" << r.stats.discarded_centers << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      weights.validate();
      const fs::path ref = fs::is_directory(ref_dir / "gt") ? ref_dir / "gt" : ref_dir;
      const LoadedResult reference = read_result(ref);
      const LoadedResult result = read_result(res_dir);
      const EvalReport report = evaluate(reference.forest, reference.frames, result.forest, result.frames, weights);
      const fs::path dir = eval_out.empty() ? res_dir : eval_out;
      fs::create_directories(dir);
      write_file(dir / "metrics.txt", report_text(report));
      write_file(dir / "metrics.json", report_json(report).dump(2) + "\n");
      const json w = {{"ns", weights.ns}, {"fn", weights.fn}, {"fp", weights.fp},
                      {"ed", weights.ed}, {"ea", weights.ea}, {"ec", weights.ec}};
      write_manifest(dir, "eval", {{"ref", ref.string()}, {"res", res_dir.string()}, {"weights", w}}, "eval_manifest.json");
      out << report_text(report);
      return kExitOk;
    }

    if (serve->parsed()) {
      serve_opts.backend = g.backend;
      serve_opts.workers = g.workers;
      serve_opts.seed = g.seed.value_or(0);
      CurationService service(serve_opts);
      out << "serve: listening on http://" << host << ":" << port << "\n" << std::flush;
      serve_curation(service, host, port);
      return kExitOk;
    }

    if (backend_serve->parsed()) {
      const OracleBackend oracle;
      wire::ServeOptions opts;
      opts.max_voxels = max_voxels;
      httplib::Server server;
      server.Post(".*", [&](const httplib::Request& req, httplib::Response& res) {
        std::optional<std::string> proto;
        if (req.has_header(wire::kProtoHeader)) proto = req.get_header_value(wire::kProtoHeader);
        const wire::Response r = wire::handle_request(oracle, req.path, proto, req.body, opts);
        res.status = r.status;
        res.set_content(r.body, "application/json");
      });
      out << "backend-serve: listening on http://" << backend_host << ":" << backend_port << "\n" << std::flush;
      if (!server.listen(backend_host, backend_port))
        throw IoError("cannot listen on " + backend_host + ":" + std::to_string(backend_port));
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: code=" << e.code() << " message=" << one_line(e.what()) << "\n";
    return e.code() == "config" ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: code=runtime message=" << one_line(e.what()) << "\n";
    return kExitRuntime;
  }
  err << "error: code=usage message=no mode given\n";
  return kExitUsage;
}

} // namespace lineagetrack::cli
