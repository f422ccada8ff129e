#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nvs/error.hpp"

namespace nvs {

using Vec3 = std::array<double, 3>;

// Exact at multiples of 90 degrees so axis-aligned cameras stay axis-aligned.
inline double cos_deg(double deg) {
  const double r = std::fmod(std::fmod(deg, 360.0) + 360.0, 360.0);
  if (r == 0.0) return 1.0;
  if (r == 90.0 || r == 270.0) return 0.0;
  if (r == 180.0) return -1.0;
  return std::cos(deg * std::numbers::pi / 180.0);
}

inline double sin_deg(double deg) { return cos_deg(deg - 90.0); }

inline Vec3 direction_from_angles(double elevation_deg, double azimuth_deg) {
  const double ce = cos_deg(elevation_deg);
  return {ce * cos_deg(azimuth_deg), ce * sin_deg(azimuth_deg), sin_deg(elevation_deg)};
}

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct Viewpoint {
  int id = 0;
  double elevation_deg = 0.0;
  double azimuth_deg = 0.0;

  Vec3 position() const { return direction_from_angles(elevation_deg, azimuth_deg); }

  friend bool operator==(const Viewpoint&, const Viewpoint&) = default;
};

inline double chord_distance(const Viewpoint& a, const Viewpoint& b) {
  return distance(a.position(), b.position());
}

// Camera positions on the unit sphere. Ids are 0..n-1 in list order; no
// poles and no antipodal pairs.
class ViewSphere {
 public:
  explicit ViewSphere(std::vector<Viewpoint> views) : views_(std::move(views)) {
    validate();
  }

  std::size_t size() const { return views_.size(); }
  const std::vector<Viewpoint>& views() const& { return views_; }
  // Rvalue overload so that iterating a temporary sphere stays safe.
  std::vector<Viewpoint> views() && { return std::move(views_); }
  const Viewpoint& operator[](std::size_t i) const { return views_[i]; }

  const Viewpoint& by_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= views_.size()) {
      throw NotFound("unknown view id " + std::to_string(id));
    }
    return views_[static_cast<std::size_t>(id)];
  }

  bool contains(const Viewpoint& v) const {
    return std::find(views_.begin(), views_.end(), v) != views_.end();
  }

 private:
  void validate() const {
    if (views_.empty()) throw InvalidArgument("view sphere is empty");
    for (std::size_t i = 0; i < views_.size(); ++i) {
      const auto& v = views_[i];
      if (v.id != static_cast<int>(i)) {
        throw InvalidArgument("view ids must be 0..n-1 in order; position " +
                              std::to_string(i) + " has id " + std::to_string(v.id));
      }
      if (!(v.elevation_deg > -90.0 && v.elevation_deg < 90.0)) {
        throw InvalidArgument("view " + std::to_string(v.id) +
                              " must have |elevation| < 90");
      }
      if (!(v.azimuth_deg >= 0.0 && v.azimuth_deg < 360.0)) {
        throw InvalidArgument("view " + std::to_string(v.id) +
                              " azimuth must lie in [0, 360)");
      }
    }
    for (std::size_t i = 0; i < views_.size(); ++i) {
      const auto a = views_[i].position();
      for (std::size_t j = i + 1; j < views_.size(); ++j) {
        const auto b = views_[j].position();
        if (distance(a, Vec3{-b[0], -b[1], -b[2]}) < 1e-9) {
          throw InvalidArgument("views " + std::to_string(i) + " and " +
                                std::to_string(j) + " are antipodal");
        }
        if (distance(a, b) < 1e-9) {
          throw InvalidArgument("views " + std::to_string(i) + " and " +
                                std::to_string(j) + " coincide");
        }
      }
    }
  }

  std::vector<Viewpoint> views_;
};

// 3 views at elevation 60, 4 at 30, 4 on the equator. The southern rings of
// the full 24-view layout hold the antipodes of the northern ones and half of
// the equator is the antipode of the other half.
inline ViewSphere canonical_sphere() {
  std::vector<Viewpoint> v;
  int id = 0;
  for (double az : {0.0, 120.0, 240.0}) v.push_back({id++, 60.0, az});
  for (double az : {0.0, 90.0, 180.0, 270.0}) v.push_back({id++, 30.0, az});
  for (double az : {0.0, 45.0, 90.0, 135.0}) v.push_back({id++, 0.0, az});
  return ViewSphere(std::move(v));
}

inline const Viewpoint& farthest_view(const Viewpoint& base, const ViewSphere& sphere) {
  if (!sphere.contains(base)) {
    throw NotFound("view " + std::to_string(base.id) + " is not on the sphere");
  }
  const Viewpoint* best = nullptr;
  double best_d = -1.0;
  for (const auto& v : sphere.views()) {
    if (v.id == base.id) continue;
    const double d = chord_distance(base, v);
    if (d > best_d) {
      best_d = d;
      best = &v;
    }
  }
  if (best == nullptr) throw InvalidArgument("sphere has no view besides the base");
  return *best;
}

// argmax_i avail_i * probs_i over available entries, lowest index on ties.
inline int masked_argmax(std::span<const double> probs, std::span<const bool> avail) {
  if (probs.size() != avail.size()) {
    throw DimensionError("probability and availability lengths differ");
  }
  int best = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!avail[i]) continue;
    if (best < 0 || probs[i] > probs[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(i);
    }
  }
  if (best < 0) throw InvalidArgument("no available view");
  return best;
}

inline int argmax(std::span<const double> probs) {
  if (probs.empty()) throw InvalidArgument("argmax of an empty vector");
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

inline const Viewpoint& nearest_view(double elevation_deg, double azimuth_deg,
                                     const ViewSphere& sphere) {
  const Vec3 q = direction_from_angles(elevation_deg, azimuth_deg);
  const Viewpoint* best = &sphere[0];
  double best_d = distance(q, best->position());
  for (const auto& v : sphere.views()) {
    const double d = distance(q, v.position());
    if (d < best_d) {
      best_d = d;
      best = &v;
    }
  }
  return *best;
}

inline nlohmann::json to_json(const ViewSphere& sphere) {
  auto arr = nlohmann::json::array();
  for (const auto& v : sphere.views()) {
    arr.push_back({{"id", v.id}, {"elevation_deg", v.elevation_deg},
                   {"azimuth_deg", v.azimuth_deg}});
  }
  return arr;
}

inline ViewSphere sphere_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("view sphere override must be a JSON array");
  std::vector<Viewpoint> views;
  try {
    for (const auto& e : j) {
      views.push_back({e.at("id").get<int>(), e.at("elevation_deg").get<double>(),
                       e.at("azimuth_deg").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("view sphere override: ") + e.what());
  }
  std::sort(views.begin(), views.end(),
            [](const Viewpoint& a, const Viewpoint& b) { return a.id < b.id; });
  return ViewSphere(std::move(views));
}

}  // namespace nvs
