#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "nvs/error.hpp"
#include "nvs/rng.hpp"
#include "nvs/voxelgrid.hpp"

namespace nvs {

enum class ShapeClass { kPlane, kChair, kTable, kTower, kLShape };

inline constexpr std::array<ShapeClass, 5> kAllShapeClasses = {
    ShapeClass::kPlane, ShapeClass::kChair, ShapeClass::kTable,
    ShapeClass::kTower, ShapeClass::kLShape};

inline std::string_view class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::kPlane: return "plane";
    case ShapeClass::kChair: return "chair";
    case ShapeClass::kTable: return "table";
    case ShapeClass::kTower: return "tower";
    case ShapeClass::kLShape: return "lshape";
  }
  return "unknown";
}

inline ShapeClass parse_class(std::string_view name) {
  for (auto c : kAllShapeClasses) {
    if (class_name(c) == name) return c;
  }
  throw InvalidArgument("unknown shape class '" + std::string(name) + "'");
}

class GenerationError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kMinOccupancy = 0.01;
inline constexpr double kMaxOccupancy = 0.6;

// True when the occupied voxels form one 6-connected component. An empty grid
// is not connected.
inline bool is_connected(const BinaryGrid& g) {
  const int d = g.resolution();
  const std::size_t total = g.count();
  if (total == 0) return false;
  std::vector<std::uint8_t> seen(g.size(), 0);
  std::size_t start = 0;
  while (!g[start]) ++start;
  std::queue<std::size_t> q;
  q.push(start);
  seen[start] = 1;
  std::size_t reached = 0;
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop();
    ++reached;
    const int x = static_cast<int>(i % d);
    const int y = static_cast<int>((i / d) % d);
    const int z = static_cast<int>(i / (static_cast<std::size_t>(d) * d));
    const int nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z},
                          {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
    for (const auto& n : nb) {
      if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= d || n[1] >= d || n[2] >= d) continue;
      const std::size_t j = voxel_index(d, n[0], n[1], n[2]);
      if (g[j] && !seen[j]) {
        seen[j] = 1;
        q.push(j);
      }
    }
  }
  return reached == total;
}

inline double occupancy_fraction(const BinaryGrid& g) {
  return static_cast<double>(g.count()) / static_cast<double>(g.size());
}

// Quarter turns counter-clockwise about +z (x axis toward y axis).
inline BinaryGrid rotate_about_z(const BinaryGrid& g, int quarter_turns) {
  const int d = g.resolution();
  const int k = ((quarter_turns % 4) + 4) % 4;
  BinaryGrid out(d);
  for (int z = 0; z < d; ++z) {
    for (int y = 0; y < d; ++y) {
      for (int x = 0; x < d; ++x) {
        if (!g.at(x, y, z)) continue;
        int nx = x, ny = y;
        for (int t = 0; t < k; ++t) {
          const int tx = nx;
          nx = d - 1 - ny;
          ny = tx;
        }
        out.set(nx, ny, z, true);
      }
    }
  }
  return out;
}

namespace detail {

// Half-open box, clipped to the grid.
inline void fill_box(BinaryGrid& g, int x0, int x1, int y0, int y1, int z0, int z1) {
  const int d = g.resolution();
  x0 = std::max(x0, 0), y0 = std::max(y0, 0), z0 = std::max(z0, 0);
  x1 = std::min(x1, d), y1 = std::min(y1, d), z1 = std::min(z1, d);
  for (int z = z0; z < z1; ++z)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) g.set(x, y, z, true);
}

class Sizer {
 public:
  Sizer(int d, Rng& rng) : d_(d), rng_(rng) {}
  // Random length in [lo, hi] fractions of the grid, at least 1 voxel.
  int frac(double lo, double hi) {
    const int a = std::max(1, static_cast<int>(std::lround(lo * d_)));
    const int b = std::max(a, static_cast<int>(std::lround(hi * d_)));
    return uniform_int(rng_, a, b);
  }
  int jitter(int amount) { return uniform_int(rng_, -amount, amount); }
  int d() const { return d_; }
  Rng& rng() { return rng_; }

 private:
  int d_;
  Rng& rng_;
};

inline int centered(int d, int len, int shift) {
  return std::clamp((d - len) / 2 + shift, 0, std::max(0, d - len));
}

inline BinaryGrid make_plane(Sizer& s) {
  const int d = s.d();
  BinaryGrid g(d);
  const int thick = std::max(1, d / 8);
  const int len = s.frac(0.6, 0.8);
  const int x0 = centered(d, len, 0);
  const int zc = centered(d, thick, s.jitter(d / 16));
  const int yc = centered(d, thick, 0);
  fill_box(g, x0, x0 + len, yc, yc + thick, zc, zc + thick);  // fuselage
  const int span = s.frac(0.7, 0.9);
  const int chord = s.frac(0.15, 0.3);
  const int wx = x0 + len / 2 - chord / 2 + s.jitter(1);
  const int wy = centered(d, span, 0);
  fill_box(g, wx, wx + chord, wy, wy + span, zc, zc + 1);  // wings
  const int fin_h = s.frac(0.15, 0.25);
  const int fin_c = std::max(1, chord / 2);
  fill_box(g, x0, x0 + fin_c, yc, yc + 1, zc + thick, zc + thick + fin_h);  // fin
  const int stab = std::max(thick + 2, span / 3);
  const int sy = centered(d, stab, 0);
  fill_box(g, x0, x0 + fin_c, sy, sy + stab, zc, zc + 1);  // stabilizer
  return g;
}

inline BinaryGrid make_chair(Sizer& s) {
  const int d = s.d();
  BinaryGrid g(d);
  const int seat_x = s.frac(0.4, 0.55);
  const int seat_y = s.frac(0.4, 0.55);
  const int x0 = centered(d, seat_x, s.jitter(1));
  const int y0 = centered(d, seat_y, s.jitter(1));
  const int floor_z = std::max(0, d / 8);
  const int seat_z = floor_z + s.frac(0.25, 0.35);
  fill_box(g, x0, x0 + seat_x, y0, y0 + seat_y, seat_z, seat_z + 1);
  for (int cx : {x0, x0 + seat_x - 1})
    for (int cy : {y0, y0 + seat_y - 1}) fill_box(g, cx, cx + 1, cy, cy + 1, floor_z, seat_z);
  const int back_h = s.frac(0.3, 0.45);
  fill_box(g, x0, x0 + 1, y0, y0 + seat_y, seat_z + 1, seat_z + 1 + back_h);
  return g;
}

inline BinaryGrid make_table(Sizer& s) {
  const int d = s.d();
  BinaryGrid g(d);
  const int top_x = s.frac(0.6, 0.8);
  const int top_y = s.frac(0.4, 0.65);
  const int x0 = centered(d, top_x, s.jitter(1));
  const int y0 = centered(d, top_y, s.jitter(1));
  const int floor_z = std::max(0, d / 8);
  const int top_z = floor_z + s.frac(0.35, 0.5);
  fill_box(g, x0, x0 + top_x, y0, y0 + top_y, top_z, top_z + 1);
  const int inset = uniform_int(s.rng(), 0, std::max(0, std::min(top_x, top_y) / 6));
  for (int cx : {x0 + inset, x0 + top_x - 1 - inset})
    for (int cy : {y0 + inset, y0 + top_y - 1 - inset})
      fill_box(g, cx, cx + 1, cy, cy + 1, floor_z, top_z);
  return g;
}

inline BinaryGrid make_tower(Sizer& s) {
  const int d = s.d();
  BinaryGrid g(d);
  const int w = s.frac(0.15, 0.25);
  const int h = s.frac(0.6, 0.8);
  const int floor_z = std::max(0, d / 8);
  const int x0 = centered(d, w, s.jitter(1));
  const int y0 = centered(d, w, s.jitter(1));
  fill_box(g, x0, x0 + w, y0, y0 + w, floor_z, std::min(d, floor_z + h));
  const int base = s.frac(0.3, 0.45);
  const int bx = x0 + w / 2 - base / 2;
  const int by = y0 + w / 2 - base / 2;
  fill_box(g, bx, bx + base, by, by + base, floor_z, floor_z + 1);
  return g;
}

inline BinaryGrid make_lshape(Sizer& s) {
  const int d = s.d();
  BinaryGrid g(d);
  const int la = s.frac(0.5, 0.75);
  const int lb = s.frac(0.35, 0.6);
  const int w = s.frac(0.15, 0.25);
  const int h = s.frac(0.15, 0.35);
  const int floor_z = std::max(0, d / 8);
  const int x0 = centered(d, la, 0);
  const int y0 = centered(d, lb, 0);
  fill_box(g, x0, x0 + la, y0, y0 + w, floor_z, floor_z + h);
  fill_box(g, x0, x0 + w, y0, y0 + lb, floor_z, floor_z + h);
  return rotate_about_z(g, uniform_int(s.rng(), 0, 3));
}

}  // namespace detail

// Deterministic in (class, seed, resolution). Retries with a derived stream
// until the result is 6-connected with occupancy in [0.01, 0.6].
inline BinaryGrid generate_shape(ShapeClass cls, std::uint64_t seed, int resolution = 16) {
  check_resolution(resolution);
  if (resolution < 4) throw InvalidArgument("shape generation needs resolution >= 4");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, {hash_name(class_name(cls)),
                               static_cast<std::uint64_t>(resolution),
                               static_cast<std::uint64_t>(attempt)}));
    detail::Sizer s(resolution, rng);
    BinaryGrid g;
    switch (cls) {
      case ShapeClass::kPlane: g = detail::make_plane(s); break;
      case ShapeClass::kChair: g = detail::make_chair(s); break;
      case ShapeClass::kTable: g = detail::make_table(s); break;
      case ShapeClass::kTower: g = detail::make_tower(s); break;
      case ShapeClass::kLShape: g = detail::make_lshape(s); break;
    }
    const double f = occupancy_fraction(g);
    if (f >= kMinOccupancy && f <= kMaxOccupancy && is_connected(g)) return g;
  }
  throw GenerationError("could not generate a valid " + std::string(class_name(cls)) +
                        " after 100 attempts");
}

}  // namespace nvs
