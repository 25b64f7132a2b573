#pragma once

#include <lineagetrack/backend.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

/// JSON wire format spoken between the engine and a model server.
///
///   POST /v1/propagate  {"reference": T, "target": T, "prompts": P}  -> {"mask": T}
///   POST /v1/embed      {"patch": T, "box": B}                      -> {"mask": T, "feature": T}
///   POST /v1/segment3d  {"patch": T, "click": [z,]y,x]}             -> {"mask": T, "empty": bool}
///
/// T = {"dtype": "u8"|"u16"|"f32", "shape": [...], "data": base64 of raw
/// little-endian samples}. Masks travel as u8 tensors over the patch grid.
/// P = {"box": B, "pos": [[y,x]...], "neg": [[y,x]...]}; B = [y0,x0,y1,x1]
/// (half-open). 3D patches prefix every coordinate with z. Failures answer a
/// non-2xx status with {"error": {"code": ..., "message": ...}}. Every request
/// carries the header X-LT-Proto: 1.
namespace lineagetrack::wire {

inline constexpr const char* kProtoHeader = "X-LT-Proto";
inline constexpr const char* kProtoVersion = "1";

std::string base64_encode(std::string_view bytes);
/// Throws BackendError("bad_tensor") on malformed input.
std::string base64_decode(std::string_view text);

struct Tensor {
  Dtype dtype = Dtype::u8;
  std::vector<std::int64_t> shape;
  std::string bytes; ///< raw little-endian samples
};

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

/// Samples are converted to the volume's dtype (rounded and clamped for integers).
Tensor tensor_from_volume(const Volume& v);
Volume volume_from_tensor(const Tensor& t);

/// u8 tensor over `shape`; 2 dims when `ndim` is 2.
Tensor tensor_from_mask(const InstanceMask& m, const Shape& shape, int ndim);
InstanceMask mask_from_tensor(const Tensor& t, const Shape& expected);

Tensor tensor_from_feature(const MemoryFeature& f);
MemoryFeature feature_from_tensor(const Tensor& t);

nlohmann::json coord_to_json(const Coord& c, int ndim);
Coord coord_from_json(const nlohmann::json& j, int ndim);
nlohmann::json box_to_json(const Box& b, int ndim);
Box box_from_json(const nlohmann::json& j, int ndim);
nlohmann::json prompts_to_json(const PromptSet& p, int ndim);
PromptSet prompts_from_json(const nlohmann::json& j, int ndim);

nlohmann::json error_body(std::string_view code, std::string_view message);

struct Response {
  int status = 200;
  std::string body;
};

struct ServeOptions {
  /// Largest accepted patch in voxels; 0 means no limit.
  std::int64_t max_voxels = 0;
};

/// Serves one protocol request against `backend`. Never throws: protocol and
/// backend failures become error envelopes (400 malformed input, 404 unknown
/// path, 413 oversize patch, 501 unsupported capability, 500 otherwise).
Response handle_request(const PromptableBackend& backend, std::string_view path,
                        const std::optional<std::string>& proto_header, std::string_view body,
                        const ServeOptions& options = {});

} // namespace lineagetrack::wire
