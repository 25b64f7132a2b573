#pragma once

#include <lineagetrack/frame_source.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace lineagetrack {

/// Version written to the store's .zattrs; stores with another version are rejected.
inline constexpr int kChunkedStoreVersion = 1;

/// One array of shape (T, Y, X) or (T, Z, Y, X) in a Zarr v2 directory layout:
/// uncompressed little-endian chunks named "t.z.y.x" (or "t.y.x"), fill value
/// 0 for chunks that were never written. Reads touch only the chunks that
/// intersect the requested box.
class ChunkedVolume final : public FrameSource {
public:
  /// Chunk extents (1, 64, 64) in 2D and (1, 32, 64, 64) in 3D by default.
  static ChunkedVolume create(const std::filesystem::path& path, int n_frames, const Shape& shape, int ndim, Dtype dtype,
                              const Spacing& spacing = {}, std::vector<std::int64_t> chunks = {});
  static ChunkedVolume open(const std::filesystem::path& path);

  ChunkedVolume(ChunkedVolume&&) noexcept;
  ChunkedVolume& operator=(ChunkedVolume&&) noexcept;
  ~ChunkedVolume() override;

  int n_frames() const override;
  Shape shape() const override;
  int ndim() const override;
  Dtype dtype() const override;
  Spacing spacing() const override;
  Volume read_box(int t, const Box& box) const override;

  /// Writes every chunk of frame t (single writer).
  void write_frame(int t, const Volume& v);

  const std::vector<std::int64_t>& chunks() const;
  const std::filesystem::path& path() const;
  /// Chunk files read since opening.
  std::uint64_t chunks_read() const;

private:
  struct Impl;
  explicit ChunkedVolume(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

} // namespace lineagetrack
