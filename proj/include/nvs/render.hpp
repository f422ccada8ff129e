#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "nvs/binary_io.hpp"
#include "nvs/error.hpp"
#include "nvs/rng.hpp"
#include "nvs/viewsphere.hpp"
#include "nvs/voxelgrid.hpp"

namespace nvs {

inline constexpr int kMinImageSize = 8;
inline constexpr int kDefaultImageSize = 32;

// Square 3-channel image, pixels stored row-major as (row, col, channel).
struct Image {
  int size = 0;
  std::vector<float> pixels;

  Image() = default;
  explicit Image(int s, float fill = 0.0f)
      : size(s), pixels(static_cast<std::size_t>(s) * s * 3, fill) {}

  float& at(int row, int col, int ch) {
    return pixels[(static_cast<std::size_t>(row) * size + col) * 3 + ch];
  }
  float at(int row, int col, int ch) const {
    return pixels[(static_cast<std::size_t>(row) * size + col) * 3 + ch];
  }
  bool is_background(int row, int col) const {
    return at(row, col, 0) == 0.0f && at(row, col, 1) == 0.0f && at(row, col, 2) == 0.0f;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Orthographic camera looking at the origin from a unit-sphere position. The
// image plane spans the grid's extent [-0.5, 0.5] in both directions.
struct OrthoCamera {
  Vec3 forward;  // ray direction
  Vec3 right;
  Vec3 up;
  Vec3 eye;  // point on the plane through which the centre ray passes

  static constexpr double kPlaneDistance = 0.8660254037844386;  // sqrt(3) / 2

  explicit OrthoCamera(const Viewpoint& v) {
    const Vec3 p = v.position();
    forward = {-p[0], -p[1], -p[2]};
    Vec3 world_up{0.0, 0.0, 1.0};
    if (std::abs(v.elevation_deg) >= 90.0) world_up = {1.0, 0.0, 0.0};
    const double dot = world_up[0] * forward[0] + world_up[1] * forward[1] + world_up[2] * forward[2];
    up = {world_up[0] - dot * forward[0], world_up[1] - dot * forward[1],
          world_up[2] - dot * forward[2]};
    const double n = std::sqrt(up[0] * up[0] + up[1] * up[1] + up[2] * up[2]);
    for (auto& c : up) c /= n;
    right = {forward[1] * up[2] - forward[2] * up[1], forward[2] * up[0] - forward[0] * up[2],
             forward[0] * up[1] - forward[1] * up[0]};
    eye = {p[0] * kPlaneDistance, p[1] * kPlaneDistance, p[2] * kPlaneDistance};
  }

  // Origin of the ray through pixel (row, col) of an s x s image.
  Vec3 ray_origin(int row, int col, int s) const {
    const double a = (col + 0.5) / s - 0.5;
    const double b = 0.5 - (row + 0.5) / s;
    return {eye[0] + a * right[0] + b * up[0], eye[1] + a * right[1] + b * up[1],
            eye[2] + a * right[2] + b * up[2]};
  }

  static constexpr double max_depth() { return 2.0 * kPlaneDistance; }
};

namespace detail {

// Ray parameter of the first occupied voxel along origin + t * dir, or a
// negative value on a miss. Grid occupies [-0.5, 0.5]^3.
inline double first_hit(const BinaryGrid& grid, const Vec3& origin, const Vec3& dir) {
  const int d = grid.resolution();
  constexpr double inf = std::numeric_limits<double>::infinity();
  double g[3], v[3];
  for (int k = 0; k < 3; ++k) {
    g[k] = (origin[k] + 0.5) * d;
    v[k] = dir[k] * d;
  }
  double t0 = 0.0, t1 = inf;
  for (int k = 0; k < 3; ++k) {
    if (v[k] == 0.0) {
      if (g[k] < 0.0 || g[k] >= d) return -1.0;
      continue;
    }
    double a = (0.0 - g[k]) / v[k];
    double b = (d - g[k]) / v[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 >= t1) return -1.0;

  int cell[3], step[3];
  double t_max[3], t_delta[3];
  for (int k = 0; k < 3; ++k) {
    const double p = g[k] + v[k] * t0;
    cell[k] = std::clamp(static_cast<int>(std::floor(p)), 0, d - 1);
    if (v[k] > 0.0) {
      step[k] = 1;
      t_max[k] = (cell[k] + 1 - g[k]) / v[k];
      t_delta[k] = 1.0 / v[k];
    } else if (v[k] < 0.0) {
      step[k] = -1;
      t_max[k] = (cell[k] - g[k]) / v[k];
      t_delta[k] = -1.0 / v[k];
    } else {
      step[k] = 0;
      t_max[k] = inf;
      t_delta[k] = inf;
    }
  }
  double t = t0;
  while (true) {
    if (grid.at(cell[0], cell[1], cell[2])) return t;
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t = t_max[axis];
    if (t >= t1) return -1.0;
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= d) return -1.0;
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace detail

// Depth-coded orthographic view: first-hit depth maps linearly from 1 (near
// plane) to 0.2 (far plane); background is 0. Gray replicated to 3 channels.
inline Image render_view(const BinaryGrid& grid, const Viewpoint& view, int size = kDefaultImageSize) {
  if (size < kMinImageSize) {
    throw InvalidArgument("image size must be at least " + std::to_string(kMinImageSize));
  }
  const OrthoCamera cam(view);
  Image img(size);
  for (int row = 0; row < size; ++row) {
    for (int col = 0; col < size; ++col) {
      const double t = detail::first_hit(grid, cam.ray_origin(row, col, size), cam.forward);
      if (t < 0.0) continue;
      const double depth = std::clamp(t / OrthoCamera::max_depth(), 0.0, 1.0);
      const auto intensity = static_cast<float>(1.0 - 0.8 * depth);
      for (int ch = 0; ch < 3; ++ch) img.at(row, col, ch) = intensity;
    }
  }
  return img;
}

inline std::vector<Image> render_all(const BinaryGrid& grid, const ViewSphere& sphere,
                                     int size = kDefaultImageSize) {
  if (size < kMinImageSize) {
    throw InvalidArgument("image size must be at least " + std::to_string(kMinImageSize));
  }
  std::vector<Image> out(sphere.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < sphere.size(); ++i) out[i] = render_view(grid, sphere[i], size);
  return out;
}

struct AugmentConfig {
  double jitter = 0.02;
};

// Background pixels get one random colour; every channel then gets uniform
// jitter in [-jitter, +jitter] and is clamped to [0, 1].
inline Image augment(const Image& img, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(derive_seed(seed, {0xa49e17ULL}));
  const float bg[3] = {static_cast<float>(uniform01(rng)), static_cast<float>(uniform01(rng)),
                       static_cast<float>(uniform01(rng))};
  Image out = img;
  for (int row = 0; row < img.size; ++row) {
    for (int col = 0; col < img.size; ++col) {
      const bool background = img.is_background(row, col);
      for (int ch = 0; ch < 3; ++ch) {
        const double base = background ? bg[ch] : img.at(row, col, ch);
        const double noise = (2.0 * uniform01(rng) - 1.0) * cfg.jitter;
        out.at(row, col, ch) = static_cast<float>(std::clamp(base + noise, 0.0, 1.0));
      }
    }
  }
  return out;
}

// Binary P6 pixmap, 8 bits per channel.
inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.size) + " " + std::to_string(img.size) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(
        std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  io::write_file(path, encode_ppm(img));
}

}  // namespace nvs
