#include <lineagetrack/wire.hpp>

#include <lineagetrack/error.hpp>

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace lineagetrack::wire {

static_assert(std::endian::native == std::endian::little, "wire tensors are copied as host-order bytes");

using nlohmann::json;

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  if (bytes.empty()) return out;
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw BackendError("base64 length is not a multiple of 4", "bad_tensor");
  if (text.empty()) return {};
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  if (text.substr(0, text.size() - pad).find('=') != std::string_view::npos)
    throw BackendError("misplaced base64 padding", "bad_tensor");
  std::string out(3 * (text.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw BackendError("malformed base64 payload", "bad_tensor");
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

json tensor_to_json(const Tensor& t) {
  return json{{"dtype", to_string(t.dtype)}, {"shape", t.shape}, {"data", base64_encode(t.bytes)}};
}

Tensor tensor_from_json(const json& j) {
  if (!j.is_object() || !j.contains("dtype") || !j.contains("shape") || !j.contains("data"))
    throw BackendError("tensor needs dtype, shape and data", "bad_tensor");
  if (!j["dtype"].is_string() || !j["shape"].is_array() || !j["data"].is_string())
    throw BackendError("tensor fields have the wrong JSON types", "bad_tensor");
  Tensor t;
  try {
    t.dtype = parse_dtype(j["dtype"].get<std::string>());
  } catch (const Error& e) {
    throw BackendError(e.what(), "bad_tensor");
  }
  std::int64_t count = 1;
  for (const auto& s : j["shape"]) {
    if (!s.is_number_integer() || s.get<std::int64_t>() < 1) throw BackendError("tensor dimensions must be positive integers", "bad_tensor");
    t.shape.push_back(s.get<std::int64_t>());
    count *= t.shape.back();
  }
  if (t.shape.empty()) throw BackendError("tensor shape is empty", "bad_tensor");
  t.bytes = base64_decode(j["data"].get<std::string>());
  if (static_cast<std::int64_t>(t.bytes.size()) != count * static_cast<std::int64_t>(dtype_size(t.dtype)))
    throw BackendError("tensor payload size does not match its shape", "bad_tensor");
  return t;
}

namespace {

Shape shape_of(const Tensor& t) {
  if (t.shape.size() == 2) return {1, static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1])};
  if (t.shape.size() == 3) return {static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2])};
  throw BackendError("image tensors must have 2 or 3 dimensions", "bad_tensor");
}

std::vector<std::int64_t> dims_of(const Shape& s, int ndim) {
  if (ndim == 2) return {s.y, s.x};
  return {s.z, s.y, s.x};
}

template <class T>
T clamp_round(float v) {
  const double r = std::nearbyint(static_cast<double>(v));
  return static_cast<T>(std::clamp(r, 0.0, static_cast<double>(std::numeric_limits<T>::max())));
}

} // namespace

Tensor tensor_from_volume(const Volume& v) {
  Tensor t;
  t.dtype = v.dtype();
  t.shape = dims_of(v.shape(), v.ndim());
  const auto data = v.data();
  t.bytes.resize(data.size() * dtype_size(v.dtype()));
  char* out = t.bytes.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    switch (v.dtype()) {
    case Dtype::u8: {
      const auto s = clamp_round<std::uint8_t>(data[i]);
      std::memcpy(out + i, &s, 1);
      break;
    }
    case Dtype::u16: {
      const auto s = clamp_round<std::uint16_t>(data[i]);
      std::memcpy(out + 2 * i, &s, 2);
      break;
    }
    case Dtype::f32:
      std::memcpy(out + 4 * i, &data[i], 4);
      break;
    }
  }
  return t;
}

Volume volume_from_tensor(const Tensor& t) {
  const Shape s = shape_of(t);
  Volume v(s, t.dtype, static_cast<int>(t.shape.size()));
  auto data = v.data();
  const char* in = t.bytes.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    switch (t.dtype) {
    case Dtype::u8: {
      std::uint8_t x;
      std::memcpy(&x, in + i, 1);
      data[i] = x;
      break;
    }
    case Dtype::u16: {
      std::uint16_t x;
      std::memcpy(&x, in + 2 * i, 2);
      data[i] = x;
      break;
    }
    case Dtype::f32: {
      float x;
      std::memcpy(&x, in + 4 * i, 4);
      if (!std::isfinite(x)) throw BackendError("non-finite sample in tensor", "bad_tensor");
      data[i] = x;
      break;
    }
    }
  }
  return v;
}

Tensor tensor_from_mask(const InstanceMask& m, const Shape& shape, int ndim) {
  Tensor t;
  t.dtype = Dtype::u8;
  t.shape = dims_of(shape, ndim);
  t.bytes.assign(static_cast<std::size_t>(shape.count()), '\0');
  for (const Run& r : m.runs()) {
    if (r.z < 0 || r.z >= shape.z || r.y < 0 || r.y >= shape.y || r.x0 < 0 || r.x_end() > shape.x)
      throw BackendError("mask exceeds the patch", "bad_tensor");
    const std::size_t base = (static_cast<std::size_t>(r.z) * shape.y + r.y) * shape.x + r.x0;
    std::fill_n(t.bytes.begin() + static_cast<std::ptrdiff_t>(base), r.length, '\1');
  }
  return t;
}

InstanceMask mask_from_tensor(const Tensor& t, const Shape& expected) {
  if (t.dtype != Dtype::u8) throw BackendError("mask tensors must be u8", "bad_tensor");
  const Shape s = shape_of(t);
  if (s != expected) throw BackendError("mask tensor does not match the patch shape", "bad_tensor");
  std::vector<Run> runs;
  std::size_t i = 0;
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x, ++i) {
        if (t.bytes[i] == 0) continue;
        if (!runs.empty() && runs.back().z == z && runs.back().y == y && runs.back().x_end() == x) {
          ++runs.back().length;
        } else {
          runs.push_back({z, y, x, 1});
        }
      }
  return InstanceMask::from_runs(1, 0, std::move(runs));
}

Tensor tensor_from_feature(const MemoryFeature& f) {
  Tensor t;
  t.dtype = Dtype::f32;
  t.shape = {static_cast<std::int64_t>(f.dim())};
  t.bytes.resize(f.dim() * 4);
  std::memcpy(t.bytes.data(), f.values.data(), t.bytes.size());
  return t;
}

MemoryFeature feature_from_tensor(const Tensor& t) {
  if (t.dtype != Dtype::f32 || t.shape.size() != 1) throw BackendError("features must be 1-D f32 tensors", "bad_tensor");
  MemoryFeature f;
  f.values.resize(static_cast<std::size_t>(t.shape[0]));
  std::memcpy(f.values.data(), t.bytes.data(), t.bytes.size());
  for (float v : f.values)
    if (!std::isfinite(v)) throw BackendError("non-finite feature entry", "bad_tensor");
  return f;
}

json coord_to_json(const Coord& c, int ndim) {
  if (ndim == 2) return json::array({c.y, c.x});
  return json::array({c.z, c.y, c.x});
}

Coord coord_from_json(const json& j, int ndim) {
  const std::size_t n = ndim == 2 ? 2 : 3;
  if (!j.is_array() || j.size() != n) throw BackendError("point must have " + std::to_string(n) + " coordinates", "bad_prompt");
  for (const auto& v : j)
    if (!v.is_number_integer()) throw BackendError("point coordinates must be integers", "bad_prompt");
  if (ndim == 2) return {0, j[0].get<int>(), j[1].get<int>()};
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json box_to_json(const Box& b, int ndim) {
  if (ndim == 2) return json::array({b.lo.y, b.lo.x, b.hi.y, b.hi.x});
  return json::array({b.lo.z, b.lo.y, b.lo.x, b.hi.z, b.hi.y, b.hi.x});
}

Box box_from_json(const json& j, int ndim) {
  const std::size_t n = ndim == 2 ? 4 : 6;
  if (!j.is_array() || j.size() != n) throw BackendError("box must have " + std::to_string(n) + " entries", "bad_prompt");
  for (const auto& v : j)
    if (!v.is_number_integer()) throw BackendError("box entries must be integers", "bad_prompt");
  if (ndim == 2) return {{0, j[0].get<int>(), j[1].get<int>()}, {1, j[2].get<int>(), j[3].get<int>()}};
  return {{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()}, {j[3].get<int>(), j[4].get<int>(), j[5].get<int>()}};
}

json prompts_to_json(const PromptSet& p, int ndim) {
  json pos = json::array(), neg = json::array();
  for (const Coord& c : p.positive) pos.push_back(coord_to_json(c, ndim));
  for (const Coord& c : p.negative) neg.push_back(coord_to_json(c, ndim));
  return json{{"box", box_to_json(p.box, ndim)}, {"pos", pos}, {"neg", neg}};
}

PromptSet prompts_from_json(const json& j, int ndim) {
  if (!j.is_object() || !j.contains("box")) throw BackendError("prompts need a box", "bad_prompt");
  PromptSet p;
  p.box = box_from_json(j["box"], ndim);
  for (const char* key : {"pos", "neg"}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_array()) throw BackendError(std::string(key) + " must be a list of points", "bad_prompt");
    auto& dst = std::string_view(key) == "pos" ? p.positive : p.negative;
    for (const auto& c : j[key]) dst.push_back(coord_from_json(c, ndim));
  }
  return p;
}

json error_body(std::string_view code, std::string_view message) {
  return json{{"error", {{"code", code}, {"message", message}}}};
}

namespace {

Response fail(int status, std::string_view code, std::string_view message) {
  return {status, error_body(code, message).dump()};
}

int status_for(const std::string& code) {
  if (code == "patch_too_large") return 413;
  if (code == "unsupported") return 501;
  if (code == "bad_tensor" || code == "bad_prompt" || code == "bad_request") return 400;
  return 500;
}

const json& field(const json& body, const char* key) {
  if (!body.contains(key)) throw BackendError(std::string("missing field '") + key + "'", "bad_request");
  return body[key];
}

Volume image_field(const json& body, const char* key, const ServeOptions& options) {
  Volume v = volume_from_tensor(tensor_from_json(field(body, key)));
  if (options.max_voxels > 0 && v.shape().count() > options.max_voxels)
    throw BackendError("patch exceeds " + std::to_string(options.max_voxels) + " voxels", "patch_too_large");
  return v;
}

} // namespace

Response handle_request(const PromptableBackend& backend, std::string_view path,
                        const std::optional<std::string>& proto_header, std::string_view body,
                        const ServeOptions& options) {
  if (path != "/v1/propagate" && path != "/v1/embed" && path != "/v1/segment3d")
    return fail(404, "not_found", "unknown endpoint " + std::string(path));
  if (!proto_header || *proto_header != kProtoVersion)
    return fail(400, "bad_proto", std::string("header ") + kProtoHeader + ": " + kProtoVersion + " is required");

  json req;
  try {
    req = json::parse(body);
  } catch (const json::exception& e) {
    return fail(400, "bad_request", std::string("request is not JSON: ") + e.what());
  }
  if (!req.is_object()) return fail(400, "bad_request", "request must be a JSON object");

  const Capabilities caps = backend.capabilities();
  try {
    if (path == "/v1/propagate") {
      if (!caps.propagate) return fail(501, "unsupported", "backend cannot propagate");
      const Volume ref = image_field(req, "reference", options);
      const Volume tgt = image_field(req, "target", options);
      const PromptSet prompts = prompts_from_json(field(req, "prompts"), ref.ndim());
      const InstanceMask m = backend.propagate(ref, tgt, prompts);
      return {200, json{{"mask", tensor_to_json(tensor_from_mask(m, tgt.shape(), tgt.ndim()))}}.dump()};
    }
    if (path == "/v1/embed") {
      if (!caps.embed) return fail(501, "unsupported", "backend cannot embed");
      const Volume patch = image_field(req, "patch", options);
      const Box box = box_from_json(field(req, "box"), patch.ndim());
      const EmbedResult r = backend.embed(patch, box);
      return {200, json{{"mask", tensor_to_json(tensor_from_mask(r.mask, patch.shape(), patch.ndim()))},
                        {"feature", tensor_to_json(tensor_from_feature(r.feature))}}
                       .dump()};
    }
    if (!caps.segment3d) return fail(501, "unsupported", "backend cannot segment3d");
    const Volume patch = image_field(req, "patch", options);
    const Coord click = coord_from_json(field(req, "click"), patch.ndim());
    const Segment3dResult r = backend.segment3d(patch, click);
    return {200, json{{"mask", tensor_to_json(tensor_from_mask(r.mask, patch.shape(), patch.ndim()))}, {"empty", r.empty}}.dump()};
  } catch (const Error& e) {
    return fail(status_for(e.code()), e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(500, "internal", e.what());
  }
}

} // namespace lineagetrack::wire
