#pragma once

#include <lineagetrack/volume.hpp>

#include <vector>

namespace lineagetrack {

/// Read access to a time-lapse sequence. Reads are zero-filled outside the
/// grid and safe to issue concurrently.
class FrameSource {
public:
  virtual ~FrameSource() = default;

  virtual int n_frames() const = 0;
  virtual Shape shape() const = 0;
  virtual int ndim() const = 0;
  virtual Dtype dtype() const = 0;
  virtual Spacing spacing() const { return {}; }

  virtual Volume read_box(int t, const Box& box) const = 0;

  Volume read_frame(int t) const { return read_box(t, full_box(shape())); }
};

class InMemoryFrames final : public FrameSource {
public:
  /// All frames must share shape, dtype and ndim.
  explicit InMemoryFrames(std::vector<Volume> frames);

  int n_frames() const override { return static_cast<int>(frames_.size()); }
  Shape shape() const override { return frames_.front().shape(); }
  int ndim() const override { return frames_.front().ndim(); }
  Dtype dtype() const override { return frames_.front().dtype(); }
  Spacing spacing() const override { return frames_.front().spacing(); }
  Volume read_box(int t, const Box& box) const override;

  const Volume& frame(int t) const { return frames_.at(static_cast<std::size_t>(t)); }

private:
  std::vector<Volume> frames_;
};

} // namespace lineagetrack
