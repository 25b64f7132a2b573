#pragma once

#include <lineagetrack/frame_source.hpp>
#include <lineagetrack/lineage.hpp>
#include <lineagetrack/linking.hpp>
#include <lineagetrack/tracker.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace lineagetrack::cli {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct CurationOptions {
  std::filesystem::path data;
  /// Each run writes into <out>/run-<n>.
  std::filesystem::path out;
  std::string backend = "oracle";
  int workers = 1;
  std::uint64_t seed = 0;
  TrackerConfig tracker;
  LinkConfig link;
};

struct SeedPoint {
  int id = 0;
  int t = 0;
  Coord at;
  bool selected = true;
};

/// State behind the curation API. Routes:
///   GET  /api/frames/{t}/projection  8-bit PNG max-projection
///   GET  /api/seeds                  [{id, t, z?, y, x, selected}]
///   PUT  /api/seeds                  replaces the list, echoes it back
///   POST /api/track/start            {mode, config} -> 202 with the resolved run config
///   GET  /api/track/status           {state, frame, n_active, run}
///   GET  /api/lineage                {tracklets: [{id, t_start, t_end, parent}]}
///   GET  /api/frames/{t}/overlay     RGBA PNG of the last result, one colour per tracklet
/// Only one run is active at a time; a second start answers 409.
class CurationService {
public:
  explicit CurationService(CurationOptions options);
  ~CurationService();
  CurationService(const CurationService&) = delete;
  CurationService& operator=(const CurationService&) = delete;

  HttpReply handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks until the current run, if any, has finished.
  void wait();

  const FrameSource& frames() const { return *frames_; }

private:
  HttpReply get_seeds() const;
  HttpReply put_seeds(const std::string& body);
  HttpReply start(const std::string& body);
  HttpReply status() const;
  HttpReply lineage() const;
  HttpReply projection(int t) const;
  HttpReply overlay(int t) const;

  nlohmann::json seeds_json(const std::vector<SeedPoint>& seeds) const;

  CurationOptions options_;
  std::unique_ptr<FrameSource> frames_;

  mutable std::mutex mutex_;
  std::vector<SeedPoint> seeds_;
  std::string state_ = "idle";
  std::string error_;
  int run_ = 0;
  int frame_ = 0;
  std::size_t n_active_ = 0;
  std::optional<LineageForest> forest_;
  std::vector<DetectionSet> masks_;
  std::jthread worker_;
};

/// Serves `service` over HTTP until the process is stopped.
void serve_curation(CurationService& service, const std::string& host, int port);

} // namespace lineagetrack::cli
