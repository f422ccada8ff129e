// Prints the canonical viewpoints and the farthest view from each.

#include <cstdio>

#include "nvs/viewsphere.hpp"

int main() {
  const auto sphere = nvs::canonical_sphere();
  std::printf("%3s %6s %6s   %s\n", "id", "elev", "azim", "farthest");
  for (const auto& v : sphere.views()) {
    const auto& f = nvs::farthest_view(v, sphere);
    std::printf("%3d %6.0f %6.0f   %d (%.0f, %.0f)\n", v.id, v.elevation_deg, v.azimuth_deg, f.id,
                f.elevation_deg, f.azimuth_deg);
  }
}
