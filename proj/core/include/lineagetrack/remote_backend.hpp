#pragma once

#include <lineagetrack/backend.hpp>

#include <memory>
#include <string>

namespace lineagetrack {

struct RemoteOptions {
  /// Server base address, e.g. "http://127.0.0.1:8600".
  std::string url;
  double timeout_s = 120.0;
  /// Extra attempts after a transport failure or a 5xx answer.
  int retries = 1;
  /// Capabilities to advertise; the server answers 501 for anything it lacks.
  Capabilities capabilities{true, true, true};
};

/// Client for the model-server wire protocol. Connections are pooled, so
/// concurrent calls from the tracking passes each get their own keep-alive
/// connection.
class RemoteBackend final : public PromptableBackend {
public:
  explicit RemoteBackend(RemoteOptions options);
  ~RemoteBackend() override;
  RemoteBackend(const RemoteBackend&) = delete;
  RemoteBackend& operator=(const RemoteBackend&) = delete;

  Capabilities capabilities() const override { return options_.capabilities; }
  InstanceMask propagate(const Volume& reference, const Volume& target, const PromptSet& prompts) const override;
  EmbedResult embed(const Volume& patch, const Box& box) const override;
  Segment3dResult segment3d(const Volume& patch, const Coord& click) const override;

  const RemoteOptions& options() const { return options_; }

private:
  struct Pool;
  std::string post(const char* path, const std::string& body) const;

  RemoteOptions options_;
  std::unique_ptr<Pool> pool_;
};

} // namespace lineagetrack
