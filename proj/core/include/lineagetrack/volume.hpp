#pragma once

#include <lineagetrack/geometry.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lineagetrack {

enum class Dtype { u8, u16, f32 };

std::string_view to_string(Dtype d);
Dtype parse_dtype(std::string_view s);
std::size_t dtype_size(Dtype d);

/// One time point of intensity data. Samples are held as float regardless of
/// the declared dtype; integer dtypes round-trip exactly because every u16
/// value is representable in a float.
class Volume {
public:
  Volume() = default;
  Volume(Shape shape, Dtype dtype, int ndim, int t = 0);

  const Shape& shape() const { return shape_; }
  Dtype dtype() const { return dtype_; }
  /// 2 for planar images (shape.z == 1), 3 for stacks.
  int ndim() const { return ndim_; }
  int t() const { return t_; }
  void set_t(int t) { t_ = t; }
  const Spacing& spacing() const { return spacing_; }
  void set_spacing(const Spacing& s) { spacing_ = s; }

  bool empty() const { return data_.empty(); }

  std::size_t index(const Coord& c) const {
    return (static_cast<std::size_t>(c.z) * static_cast<std::size_t>(shape_.y) + static_cast<std::size_t>(c.y)) *
               static_cast<std::size_t>(shape_.x) +
           static_cast<std::size_t>(c.x);
  }
  float at(const Coord& c) const { return data_[index(c)]; }
  float& at(const Coord& c) { return data_[index(c)]; }
  /// Zero outside the grid.
  float value_or_zero(const Coord& c) const { return shape_.contains(c) ? at(c) : 0.0f; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  /// Copy of `box`, zero-filled where the box leaves the grid. The result has
  /// the box's extent and keeps this volume's dtype and frame index.
  Volume crop(const Box& box) const;

  /// Single z-slice as a planar volume.
  Volume slice(int z) const;

  /// Maximum-intensity projection along z.
  Volume max_projection() const;

private:
  Shape shape_{};
  Dtype dtype_ = Dtype::u16;
  int ndim_ = 2;
  int t_ = 0;
  Spacing spacing_{};
  std::vector<float> data_;
};

} // namespace lineagetrack
