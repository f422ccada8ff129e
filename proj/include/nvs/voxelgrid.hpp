#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nvs/binary_io.hpp"
#include "nvs/error.hpp"

namespace nvs {

inline constexpr double kDefaultThreshold = 0.3;
inline constexpr int kMaxResolution = 64;

inline std::size_t cube(int d) {
  return static_cast<std::size_t>(d) * static_cast<std::size_t>(d) *
         static_cast<std::size_t>(d);
}

// Flat index with x fastest, then y, then z.
inline std::size_t voxel_index(int d, int x, int y, int z) {
  return (static_cast<std::size_t>(z) * d + y) * d + x;
}

inline void check_resolution(int d) {
  if (d <= 0 || d > kMaxResolution) {
    throw InvalidArgument("voxel resolution must be in [1, " +
                          std::to_string(kMaxResolution) + "], got " +
                          std::to_string(d));
  }
}

// Dense D x D x D occupancy grid with values in [0, 1].
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution, float fill = 0.0f)
      : resolution_(resolution) {
    check_resolution(resolution);
    check_value(fill);
    values_.assign(cube(resolution), fill);
  }
  VoxelGrid(int resolution, std::vector<float> values)
      : resolution_(resolution), values_(std::move(values)) {
    check_resolution(resolution);
    if (values_.size() != cube(resolution)) {
      throw DimensionError("voxel grid of resolution " +
                           std::to_string(resolution) + " needs " +
                           std::to_string(cube(resolution)) + " values, got " +
                           std::to_string(values_.size()));
    }
    for (float v : values_) check_value(v);
  }

  int resolution() const { return resolution_; }
  std::size_t size() const { return values_.size(); }
  const std::vector<float>& values() const { return values_; }

  float at(int x, int y, int z) const {
    return values_[voxel_index(resolution_, x, y, z)];
  }
  void set(int x, int y, int z, float v) {
    check_value(v);
    values_[voxel_index(resolution_, x, y, z)] = v;
  }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  static void check_value(float v) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw InvalidArgument("occupancy value outside [0, 1]");
    }
  }

  int resolution_ = 0;
  std::vector<float> values_;
};

// Thresholded occupancy. Stored one byte per voxel for simple indexing.
class BinaryGrid {
 public:
  BinaryGrid() = default;
  explicit BinaryGrid(int resolution, bool fill = false)
      : resolution_(resolution) {
    check_resolution(resolution);
    bits_.assign(cube(resolution), fill ? 1 : 0);
  }

  int resolution() const { return resolution_; }
  std::size_t size() const { return bits_.size(); }

  bool at(int x, int y, int z) const {
    return bits_[voxel_index(resolution_, x, y, z)] != 0;
  }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(int x, int y, int z, bool v) {
    bits_[voxel_index(resolution_, x, y, z)] = v ? 1 : 0;
  }
  void set_flat(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  // Occupancy as a probability grid (1.0 for set voxels).
  VoxelGrid as_voxel_grid() const {
    std::vector<float> v(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i) v[i] = bits_[i] ? 1.0f : 0.0f;
    return VoxelGrid(resolution_, std::move(v));
  }

  friend bool operator==(const BinaryGrid&, const BinaryGrid&) = default;

 private:
  int resolution_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InvalidArgument("binarization threshold must lie in (0, 1)");
  }
}

// Bit j is set iff values[j] > threshold (strict).
inline BinaryGrid binarize(const VoxelGrid& grid, double threshold) {
  check_threshold(threshold);
  BinaryGrid out(grid.resolution());
  const auto& v = grid.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.set_flat(i, static_cast<double>(v[i]) > threshold);
  }
  return out;
}

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t union_count = 0;
};

inline OverlapCounts count_and_or(const BinaryGrid& a, const BinaryGrid& b) {
  if (a.resolution() != b.resolution()) {
    throw DimensionError("grid resolutions differ: " +
                         std::to_string(a.resolution()) + " vs " +
                         std::to_string(b.resolution()));
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i];
    const bool y = b[i];
    c.intersection += (x && y);
    c.union_count += (x || y);
  }
  return c;
}

// Two empty sets agree perfectly, so their IoU is 1.
inline double iou(const BinaryGrid& a, const BinaryGrid& b) {
  const auto c = count_and_or(a, b);
  if (c.union_count == 0) return 1.0;
  return static_cast<double>(c.intersection) / static_cast<double>(c.union_count);
}

inline double iou(const VoxelGrid& prediction, const BinaryGrid& truth,
                  double threshold = kDefaultThreshold) {
  if (prediction.resolution() != truth.resolution()) {
    throw DimensionError("prediction and truth resolutions differ");
  }
  return iou(binarize(prediction, threshold), truth);
}

// .vxg: "VXG1", u32 resolution, u8 flag (0 packed bits, 1 f32), payload.
namespace vxg {

inline constexpr std::string_view kMagic = "VXG1";
inline constexpr std::uint8_t kPackedBits = 0;
inline constexpr std::uint8_t kFloat32 = 1;

inline std::string encode(const BinaryGrid& grid) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(grid.resolution()));
  w.u8(kPackedBits);
  std::string packed((grid.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
  }
  w.bytes(packed);
  return w.take();
}

inline std::string encode(const VoxelGrid& grid) {
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(grid.resolution()));
  w.u8(kFloat32);
  for (float v : grid.values()) w.f32(v);
  return w.take();
}

struct Decoded {
  std::uint8_t flag;
  VoxelGrid grid;  // packed payloads decode to {0, 1}
};

inline Decoded decode(std::string_view bytes) {
  io::ByteReader r(bytes, "vxg");
  if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw ParseError("vxg: bad magic");
  }
  const std::uint32_t d = r.u32();
  if (d == 0 || d > static_cast<std::uint32_t>(kMaxResolution)) {
    throw ParseError("vxg: resolution " + std::to_string(d) + " out of range");
  }
  const std::uint8_t flag = r.u8();
  const std::size_t n = cube(static_cast<int>(d));
  std::size_t expected = 0;
  if (flag == kPackedBits) {
    expected = (n + 7) / 8;
  } else if (flag == kFloat32) {
    expected = n * 4;
  } else {
    throw ParseError("vxg: unknown payload flag " + std::to_string(flag));
  }
  if (r.remaining() != expected) {
    throw ParseError("vxg: payload length " + std::to_string(r.remaining()) +
                     " does not match resolution " + std::to_string(d) +
                     " (expected " + std::to_string(expected) + ")");
  }
  std::vector<float> values(n);
  if (flag == kPackedBits) {
    auto packed = r.bytes(expected);
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = ((static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1) ? 1.0f : 0.0f;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = r.f32();
      if (!(values[i] >= 0.0f && values[i] <= 1.0f)) {
        throw ParseError("vxg: occupancy value outside [0, 1]");
      }
    }
  }
  return {flag, VoxelGrid(static_cast<int>(d), std::move(values))};
}

inline BinaryGrid decode_binary(std::string_view bytes) {
  auto decoded = decode(bytes);
  BinaryGrid out(decoded.grid.resolution());
  const auto& v = decoded.grid.values();
  for (std::size_t i = 0; i < v.size(); ++i) out.set_flat(i, v[i] >= 0.5f);
  return out;
}

}  // namespace vxg
}  // namespace nvs
