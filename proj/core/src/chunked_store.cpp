#include <lineagetrack/chunked_store.hpp>

#include <lineagetrack/error.hpp>

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace lineagetrack {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string zarr_dtype(Dtype d) {
  switch (d) {
  case Dtype::u8:
    return "|u1";
  case Dtype::u16:
    return "<u2";
  case Dtype::f32:
    return "<f4";
  }
  return {};
}

Dtype parse_zarr_dtype(const std::string& s) {
  if (s == "|u1" || s == "<u1") return Dtype::u8;
  if (s == "<u2") return Dtype::u16;
  if (s == "<f4") return Dtype::f32;
  throw IoError("unsupported chunked store dtype " + s);
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("missing chunked store metadata " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("corrupt chunked store metadata " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

struct Fd {
  int fd = -1;
  explicit Fd(int f) : fd(f) {}
  ~Fd() {
    if (fd >= 0) ::close(fd);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
};

} // namespace

struct ChunkedVolume::Impl {
  fs::path path;
  std::vector<std::int64_t> shape; // T, [Z,] Y, X
  std::vector<std::int64_t> chunks;
  Dtype dtype = Dtype::u16;
  int ndim = 2;
  Spacing spacing;
  mutable std::atomic<std::uint64_t> reads{0};

  Shape frame_shape() const {
    if (ndim == 2) return {1, static_cast<int>(shape[1]), static_cast<int>(shape[2])};
    return {static_cast<int>(shape[1]), static_cast<int>(shape[2]), static_cast<int>(shape[3])};
  }
  // Chunk extents along (z, y, x); z is 1 for 2D.
  Coord chunk_zyx() const {
    if (ndim == 2) return {1, static_cast<int>(chunks[1]), static_cast<int>(chunks[2])};
    return {static_cast<int>(chunks[1]), static_cast<int>(chunks[2]), static_cast<int>(chunks[3])};
  }
  fs::path chunk_file(int t, const Coord& idx) const {
    std::ostringstream name;
    name << t << '.';
    if (ndim == 3) name << idx.z << '.';
    name << idx.y << '.' << idx.x;
    return path / name.str();
  }
  std::size_t chunk_bytes() const {
    const Coord c = chunk_zyx();
    return static_cast<std::size_t>(c.z) * c.y * c.x * dtype_size(dtype);
  }
};

ChunkedVolume::ChunkedVolume(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ChunkedVolume::ChunkedVolume(ChunkedVolume&&) noexcept = default;
ChunkedVolume& ChunkedVolume::operator=(ChunkedVolume&&) noexcept = default;
ChunkedVolume::~ChunkedVolume() = default;

ChunkedVolume ChunkedVolume::create(const fs::path& path, int n_frames, const Shape& shape, int ndim, Dtype dtype,
                                    const Spacing& spacing, std::vector<std::int64_t> chunks) {
  if (n_frames < 1 || shape.y < 1 || shape.x < 1 || shape.z < 1) throw Error("chunked store dimensions must be positive", "shape");
  if (ndim != 2 && ndim != 3) throw Error("chunked store ndim must be 2 or 3", "shape");
  if (ndim == 2 && shape.z != 1) throw Error("2D store with z > 1", "shape");
  auto impl = std::make_unique<Impl>();
  impl->path = path;
  impl->dtype = dtype;
  impl->ndim = ndim;
  impl->spacing = spacing;
  if (ndim == 2) {
    impl->shape = {n_frames, shape.y, shape.x};
    if (chunks.empty()) chunks = {1, 64, 64};
  } else {
    impl->shape = {n_frames, shape.z, shape.y, shape.x};
    if (chunks.empty()) chunks = {1, 32, 64, 64};
  }
  if (chunks.size() != impl->shape.size() || chunks[0] != 1 ||
      std::any_of(chunks.begin(), chunks.end(), [](std::int64_t c) { return c < 1; }))
    throw Error("chunk extents must match the array rank, with 1 along time", "shape");
  impl->chunks = std::move(chunks);

  fs::create_directories(path);
  write_json(path / ".zarray", json{{"zarr_format", 2},
                                    {"shape", impl->shape},
                                    {"chunks", impl->chunks},
                                    {"dtype", zarr_dtype(dtype)},
                                    {"compressor", nullptr},
                                    {"fill_value", 0},
                                    {"order", "C"},
                                    {"filters", nullptr},
                                    {"dimension_separator", "."}});
  write_json(path / ".zattrs", json{{"lineagetrack_store_version", kChunkedStoreVersion},
                                    {"ndim", ndim},
                                    {"spacing", {spacing.z, spacing.y, spacing.x}}});
  return ChunkedVolume(std::move(impl));
}

ChunkedVolume ChunkedVolume::open(const fs::path& path) {
  if (!fs::is_directory(path)) throw IoError("missing chunked store " + path.string());
  const json za = read_json(path / ".zarray");
  const json attrs = read_json(path / ".zattrs");
  auto impl = std::make_unique<Impl>();
  impl->path = path;
  try {
    if (za.at("zarr_format").get<int>() != 2) throw IoError("unsupported zarr_format in " + path.string());
    if (!za.at("compressor").is_null()) throw IoError("compressed chunks are not supported: " + path.string());
    if (za.value("order", std::string("C")) != "C") throw IoError("only C-order chunks are supported");
    if (za.value("dimension_separator", std::string(".")) != ".") throw IoError("only '.' chunk separators are supported");
    if (!za.at("fill_value").is_number() || za.at("fill_value").get<double>() != 0.0)
      throw IoError("only fill_value 0 is supported");
    impl->shape = za.at("shape").get<std::vector<std::int64_t>>();
    impl->chunks = za.at("chunks").get<std::vector<std::int64_t>>();
    impl->dtype = parse_zarr_dtype(za.at("dtype").get<std::string>());
    const int version = attrs.at("lineagetrack_store_version").get<int>();
    if (version != kChunkedStoreVersion)
      throw IoError("store version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kChunkedStoreVersion) + ")");
    const auto sp = attrs.value("spacing", std::vector<double>{1.0, 1.0, 1.0});
    if (sp.size() != 3) throw IoError("spacing must have three entries");
    impl->spacing = {sp[0], sp[1], sp[2]};
  } catch (const json::exception& e) {
    throw IoError("corrupt chunked store metadata in " + path.string() + ": " + e.what());
  }
  if (impl->shape.size() != 3 && impl->shape.size() != 4) throw IoError("store rank must be 3 or 4: " + path.string());
  if (impl->chunks.size() != impl->shape.size() || impl->chunks[0] != 1) throw IoError("bad chunk extents in " + path.string());
  for (std::size_t i = 0; i < impl->shape.size(); ++i)
    if (impl->shape[i] < 1 || impl->chunks[i] < 1) throw IoError("non-positive extent in " + path.string());
  impl->ndim = impl->shape.size() == 3 ? 2 : 3;
  return ChunkedVolume(std::move(impl));
}

int ChunkedVolume::n_frames() const { return static_cast<int>(impl_->shape[0]); }
Shape ChunkedVolume::shape() const { return impl_->frame_shape(); }
int ChunkedVolume::ndim() const { return impl_->ndim; }
Dtype ChunkedVolume::dtype() const { return impl_->dtype; }
Spacing ChunkedVolume::spacing() const { return impl_->spacing; }
const std::vector<std::int64_t>& ChunkedVolume::chunks() const { return impl_->chunks; }
const fs::path& ChunkedVolume::path() const { return impl_->path; }
std::uint64_t ChunkedVolume::chunks_read() const { return impl_->reads.load(); }

Volume ChunkedVolume::read_box(int t, const Box& box) const {
  if (t < 0 || t >= n_frames()) throw Error("frame " + std::to_string(t) + " out of range", "bounds");
  const Shape ext = box.extent();
  if (ext.z < 1 || ext.y < 1 || ext.x < 1) throw Error("empty read box", "shape");
  Volume out(ext, impl_->dtype, ext.z == 1 ? 2 : 3, t);
  out.set_spacing(impl_->spacing);
  const Box valid = box.intersect(full_box(shape()));
  if (valid.empty()) return out;

  const Coord cz = impl_->chunk_zyx();
  const std::size_t bytes = dtype_size(impl_->dtype);
  std::vector<unsigned char> buf(impl_->chunk_bytes());
  auto first = [](int lo, int c) { return lo / c; };
  auto last = [](int hi, int c) { return (hi - 1) / c; };
  for (int iz = first(valid.lo.z, cz.z); iz <= last(valid.hi.z, cz.z); ++iz)
    for (int iy = first(valid.lo.y, cz.y); iy <= last(valid.hi.y, cz.y); ++iy)
      for (int ix = first(valid.lo.x, cz.x); ix <= last(valid.hi.x, cz.x); ++ix) {
        const Coord origin{iz * cz.z, iy * cz.y, ix * cz.x};
        const Box region = valid.intersect({origin, origin + cz});
        const fs::path file = impl_->chunk_file(t, {iz, iy, ix});
        const Fd fd(::open(file.c_str(), O_RDONLY | O_CLOEXEC));
        if (fd.fd < 0) {
          if (errno == ENOENT) continue; // never written: fill value
          throw IoError("cannot open chunk " + file.string() + ": " + std::strerror(errno));
        }
        ++impl_->reads;
        std::size_t got = 0;
        while (got < buf.size()) {
          const ssize_t n = ::pread(fd.fd, buf.data() + got, buf.size() - got, static_cast<off_t>(got));
          if (n < 0 && errno == EINTR) continue;
          if (n <= 0) break;
          got += static_cast<std::size_t>(n);
        }
        char extra;
        if (got != buf.size() || ::pread(fd.fd, &extra, 1, static_cast<off_t>(got)) != 0)
          throw IoError("corrupt chunk " + file.string() + ": expected " + std::to_string(buf.size()) + " bytes");
        for (int z = region.lo.z; z < region.hi.z; ++z)
          for (int y = region.lo.y; y < region.hi.y; ++y)
            for (int x = region.lo.x; x < region.hi.x; ++x) {
              const std::size_t off =
                  ((static_cast<std::size_t>(z - origin.z) * cz.y + (y - origin.y)) * cz.x + (x - origin.x)) * bytes;
              float v = 0.0f;
              if (impl_->dtype == Dtype::u8) {
                v = buf[off];
              } else if (impl_->dtype == Dtype::u16) {
                std::uint16_t s;
                std::memcpy(&s, &buf[off], 2);
                v = s;
              } else {
                std::memcpy(&v, &buf[off], 4);
              }
              out.at({z - box.lo.z, y - box.lo.y, x - box.lo.x}) = v;
            }
      }
  return out;
}

void ChunkedVolume::write_frame(int t, const Volume& v) {
  if (t < 0 || t >= n_frames()) throw Error("frame " + std::to_string(t) + " out of range", "bounds");
  if (v.shape() != shape()) throw Error("frame shape does not match the store", "shape");
  const Shape s = shape();
  const Coord cz = impl_->chunk_zyx();
  const std::size_t bytes = dtype_size(impl_->dtype);
  std::vector<unsigned char> buf(impl_->chunk_bytes());
  for (int iz = 0; iz * cz.z < s.z; ++iz)
    for (int iy = 0; iy * cz.y < s.y; ++iy)
      for (int ix = 0; ix * cz.x < s.x; ++ix) {
        std::fill(buf.begin(), buf.end(), 0);
        const Coord origin{iz * cz.z, iy * cz.y, ix * cz.x};
        const Box region = full_box(s).intersect({origin, origin + cz});
        for (int z = region.lo.z; z < region.hi.z; ++z)
          for (int y = region.lo.y; y < region.hi.y; ++y)
            for (int x = region.lo.x; x < region.hi.x; ++x) {
              const std::size_t off =
                  ((static_cast<std::size_t>(z - origin.z) * cz.y + (y - origin.y)) * cz.x + (x - origin.x)) * bytes;
              const float f = v.at({z, y, x});
              if (impl_->dtype == Dtype::u8) {
                buf[off] = static_cast<unsigned char>(std::clamp(std::nearbyint(f), 0.0f, 255.0f));
              } else if (impl_->dtype == Dtype::u16) {
                const auto sv = static_cast<std::uint16_t>(std::clamp(std::nearbyint(f), 0.0f, 65535.0f));
                std::memcpy(&buf[off], &sv, 2);
              } else {
                std::memcpy(&buf[off], &f, 4);
              }
            }
        const fs::path file = impl_->chunk_file(t, {iz, iy, ix});
        std::ofstream out(file, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("cannot write chunk " + file.string());
      }
}

} // namespace lineagetrack
