#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <ostream>

namespace lineagetrack {

/// Integer voxel coordinate, (z, y, x), 0-based. 2D data uses z = 0.
struct Coord {
  int z = 0;
  int y = 0;
  int x = 0;

  friend auto operator<=>(const Coord&, const Coord&) = default;

  Coord operator+(const Coord& o) const { return {z + o.z, y + o.y, x + o.x}; }
  Coord operator-(const Coord& o) const { return {z - o.z, y - o.y, x - o.x}; }
};

inline std::ostream& operator<<(std::ostream& os, const Coord& c) {
  return os << '(' << c.z << ',' << c.y << ',' << c.x << ')';
}

/// Real-valued position, (z, y, x).
struct Point3 {
  double z = 0.0;
  double y = 0.0;
  double x = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;

  Coord rounded() const {
    return {static_cast<int>(std::lround(z)), static_cast<int>(std::lround(y)),
            static_cast<int>(std::lround(x))};
  }
};

inline Point3 to_point(const Coord& c) {
  return {static_cast<double>(c.z), static_cast<double>(c.y), static_cast<double>(c.x)};
}

/// Grid extent: number of slices, rows, columns.
struct Shape {
  int z = 1;
  int y = 1;
  int x = 1;

  friend bool operator==(const Shape&, const Shape&) = default;

  std::int64_t count() const {
    return static_cast<std::int64_t>(z) * static_cast<std::int64_t>(y) * static_cast<std::int64_t>(x);
  }
  bool contains(const Coord& c) const {
    return c.z >= 0 && c.y >= 0 && c.x >= 0 && c.z < z && c.y < y && c.x < x;
  }
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << s.z << 'x' << s.y << 'x' << s.x;
}

/// Half-open axis-aligned box [lo, hi).
struct Box {
  Coord lo;
  Coord hi;

  friend bool operator==(const Box&, const Box&) = default;

  Shape extent() const { return {hi.z - lo.z, hi.y - lo.y, hi.x - lo.x}; }
  bool empty() const { return hi.z <= lo.z || hi.y <= lo.y || hi.x <= lo.x; }
  bool contains(const Coord& c) const {
    return c.z >= lo.z && c.z < hi.z && c.y >= lo.y && c.y < hi.y && c.x >= lo.x && c.x < hi.x;
  }
  Box intersect(const Box& o) const {
    return {{std::max(lo.z, o.lo.z), std::max(lo.y, o.lo.y), std::max(lo.x, o.lo.x)},
            {std::min(hi.z, o.hi.z), std::min(hi.y, o.hi.y), std::min(hi.x, o.hi.x)}};
  }
  bool intersects(const Box& o) const { return !intersect(o).empty(); }
  Box translated(const Coord& d) const { return {lo + d, hi + d}; }
};

inline Box full_box(const Shape& s) { return {{0, 0, 0}, {s.z, s.y, s.x}}; }

/// Voxel spacing in physical units, (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

inline double squared_distance(const Point3& a, const Point3& b, double z_weight = 1.0) {
  const double dz = (a.z - b.z) * z_weight;
  const double dy = a.y - b.y;
  const double dx = a.x - b.x;
  return dz * dz + dy * dy + dx * dx;
}

inline double distance(const Point3& a, const Point3& b, double z_weight = 1.0) {
  return std::sqrt(squared_distance(a, b, z_weight));
}

} // namespace lineagetrack
