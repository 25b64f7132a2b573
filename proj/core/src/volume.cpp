#include <lineagetrack/volume.hpp>

#include <lineagetrack/error.hpp>

#include <algorithm>

namespace lineagetrack {

std::string_view to_string(Dtype d) {
  switch (d) {
  case Dtype::u8: return "u8";
  case Dtype::u16: return "u16";
  case Dtype::f32: return "f32";
  }
  return "u16";
}

Dtype parse_dtype(std::string_view s) {
  if (s == "u8") return Dtype::u8;
  if (s == "u16") return Dtype::u16;
  if (s == "f32") return Dtype::f32;
  throw Error("unsupported dtype: " + std::string(s), "dtype");
}

std::size_t dtype_size(Dtype d) {
  switch (d) {
  case Dtype::u8: return 1;
  case Dtype::u16: return 2;
  case Dtype::f32: return 4;
  }
  return 2;
}

Volume::Volume(Shape shape, Dtype dtype, int ndim, int t)
    : shape_(shape), dtype_(dtype), ndim_(ndim), t_(t) {
  if (shape.z < 1 || shape.y < 1 || shape.x < 1) throw Error("volume dimensions must be >= 1", "shape");
  if (ndim != 2 && ndim != 3) throw Error("volume ndim must be 2 or 3", "shape");
  if (ndim == 2 && shape.z != 1) throw Error("planar volume must have a single slice", "shape");
  if (t < 0) throw Error("frame index must be >= 0", "shape");
  data_.assign(static_cast<std::size_t>(shape.count()), 0.0f);
}

Volume Volume::crop(const Box& box) const {
  const Shape ext = box.extent();
  Volume out(ext, dtype_, ext.z == 1 ? 2 : 3, t_);
  out.spacing_ = spacing_;
  const Box valid = box.intersect(full_box(shape_));
  if (valid.empty()) return out;
  const int w = valid.hi.x - valid.lo.x;
  for (int z = valid.lo.z; z < valid.hi.z; ++z) {
    for (int y = valid.lo.y; y < valid.hi.y; ++y) {
      const float* src = &data_[index({z, y, valid.lo.x})];
      float* dst = &out.data_[out.index({z - box.lo.z, y - box.lo.y, valid.lo.x - box.lo.x})];
      std::copy(src, src + w, dst);
    }
  }
  return out;
}

Volume Volume::slice(int z) const {
  if (z < 0 || z >= shape_.z) throw Error("slice index out of range", "shape");
  return crop({{z, 0, 0}, {z + 1, shape_.y, shape_.x}});
}

Volume Volume::max_projection() const {
  Volume out({1, shape_.y, shape_.x}, dtype_, 2, t_);
  out.spacing_ = spacing_;
  for (int y = 0; y < shape_.y; ++y)
    for (int x = 0; x < shape_.x; ++x) {
      float m = at({0, y, x});
      for (int z = 1; z < shape_.z; ++z) m = std::max(m, at({z, y, x}));
      out.at({0, y, x}) = m;
    }
  return out;
}

} // namespace lineagetrack
