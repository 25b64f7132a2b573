#include <lineagetrack/remote_backend.hpp>

#include <lineagetrack/error.hpp>
#include <lineagetrack/wire.hpp>

#include <httplib.h>

#include <mutex>
#include <vector>

namespace lineagetrack {

using nlohmann::json;

struct RemoteBackend::Pool {
  std::mutex mutex;
  std::vector<std::unique_ptr<httplib::Client>> idle;
};

namespace {

std::unique_ptr<httplib::Client> make_client(const RemoteOptions& o) {
  auto c = std::make_unique<httplib::Client>(o.url);
  if (!c->is_valid()) throw BackendError("invalid backend url: " + o.url, "config");
  const auto sec = static_cast<time_t>(o.timeout_s);
  const auto usec = static_cast<time_t>((o.timeout_s - static_cast<double>(sec)) * 1e6);
  c->set_connection_timeout(sec, usec);
  c->set_read_timeout(sec, usec);
  c->set_write_timeout(sec, usec);
  c->set_keep_alive(true);
  return c;
}

BackendError from_envelope(int status, const std::string& body) {
  try {
    const json j = json::parse(body);
    if (j.contains("error") && j["error"].is_object())
      return BackendError("server answered " + std::to_string(status) + ": " + j["error"].value("message", std::string{}),
                          j["error"].value("code", std::string("remote")));
  } catch (const json::exception&) {
  }
  return BackendError("server answered " + std::to_string(status) + " without an error envelope", "remote");
}

json parse_reply(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw BackendError(std::string("reply is not JSON: ") + e.what(), "bad_reply");
  }
}

} // namespace

RemoteBackend::RemoteBackend(RemoteOptions options) : options_(std::move(options)), pool_(std::make_unique<Pool>()) {
  if (options_.url.empty()) throw Error("remote backend requires a URL", "config");
  if (options_.retries < 0) throw Error("retries must be >= 0", "config");
  pool_->idle.push_back(make_client(options_));
}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::post(const char* path, const std::string& body) const {
  std::unique_ptr<httplib::Client> client;
  {
    std::lock_guard lock(pool_->mutex);
    if (!pool_->idle.empty()) {
      client = std::move(pool_->idle.back());
      pool_->idle.pop_back();
    }
  }
  if (!client) client = make_client(options_);

  const httplib::Headers headers{{wire::kProtoHeader, wire::kProtoVersion}};
  std::string failure;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    auto res = client->Post(path, headers, body, "application/json");
    if (!res) {
      failure = "transport failure on " + std::string(path) + ": " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      failure = from_envelope(res->status, res->body).what();
      if (attempt < options_.retries) continue;
      throw from_envelope(res->status, res->body);
    }
    if (res->status < 200 || res->status >= 300) throw from_envelope(res->status, res->body);
    std::lock_guard lock(pool_->mutex);
    pool_->idle.push_back(std::move(client));
    return std::move(res->body);
  }
  throw BackendError(failure, "transport");
}

InstanceMask RemoteBackend::propagate(const Volume& reference, const Volume& target, const PromptSet& prompts) const {
  validate_prompts(prompts, reference.shape());
  const json req{{"reference", wire::tensor_to_json(wire::tensor_from_volume(reference))},
                 {"target", wire::tensor_to_json(wire::tensor_from_volume(target))},
                 {"prompts", wire::prompts_to_json(prompts, reference.ndim())}};
  const json rep = parse_reply(post("/v1/propagate", req.dump()));
  if (!rep.contains("mask")) throw BackendError("propagate reply lacks a mask", "bad_reply");
  return wire::mask_from_tensor(wire::tensor_from_json(rep["mask"]), target.shape());
}

EmbedResult RemoteBackend::embed(const Volume& patch, const Box& box) const {
  const json req{{"patch", wire::tensor_to_json(wire::tensor_from_volume(patch))}, {"box", wire::box_to_json(box, patch.ndim())}};
  const json rep = parse_reply(post("/v1/embed", req.dump()));
  if (!rep.contains("mask") || !rep.contains("feature")) throw BackendError("embed reply lacks mask or feature", "bad_reply");
  EmbedResult r;
  r.mask = wire::mask_from_tensor(wire::tensor_from_json(rep["mask"]), patch.shape());
  r.feature = wire::feature_from_tensor(wire::tensor_from_json(rep["feature"]));
  if (r.feature.dim() == 0) throw BackendError("empty feature vector", "bad_reply");
  return r;
}

Segment3dResult RemoteBackend::segment3d(const Volume& patch, const Coord& click) const {
  if (!patch.shape().contains(click)) throw BackendError("click outside the patch", "bad_prompt");
  const json req{{"patch", wire::tensor_to_json(wire::tensor_from_volume(patch))}, {"click", wire::coord_to_json(click, patch.ndim())}};
  const json rep = parse_reply(post("/v1/segment3d", req.dump()));
  if (!rep.contains("mask")) throw BackendError("segment3d reply lacks a mask", "bad_reply");
  Segment3dResult r;
  r.mask = wire::mask_from_tensor(wire::tensor_from_json(rep["mask"]), patch.shape());
  r.empty = rep.value("empty", r.mask.empty());
  return r;
}

} // namespace lineagetrack
