#include <gtest/gtest.h>

#include <deque>

#include "nvs/shapes.hpp"

using namespace nvs;

namespace {

// Plain flood fill from the first occupied voxel.
bool flood_connected(const BinaryGrid& g) {
  const int d = g.resolution();
  int start = -1;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i]) {
      start = static_cast<int>(i);
      break;
    }
  if (start < 0) return false;
  std::vector<char> seen(g.size(), 0);
  std::deque<int> queue{start};
  seen[static_cast<std::size_t>(start)] = 1;
  std::size_t reached = 0;
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    ++reached;
    const int x = i % d, y = (i / d) % d, z = i / (d * d);
    const int nb[6][3] = {{x - 1, y, z}, {x + 1, y, z}, {x, y - 1, z}, {x, y + 1, z}, {x, y, z - 1}, {x, y, z + 1}};
    for (const auto& n : nb) {
      if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= d || n[1] >= d || n[2] >= d) continue;
      const auto j = voxel_index(d, n[0], n[1], n[2]);
      if (g[j] && !seen[j]) {
        seen[j] = 1;
        queue.push_back(static_cast<int>(j));
      }
    }
  }
  return reached == g.count();
}

}  // namespace

TEST(Shapes, ClassNamesRoundTrip) {
  for (auto c : kAllShapeClasses) EXPECT_EQ(parse_class(class_name(c)), c);
  EXPECT_THROW(parse_class("sofa"), InvalidArgument);
}

TEST(Shapes, Deterministic) {
  EXPECT_EQ(generate_shape(ShapeClass::kTower, 1, 16), generate_shape(ShapeClass::kTower, 1, 16));
}

TEST(Shapes, InvariantsHoldAcrossSeedsAndResolutions) {
  for (int d : {8, 16, 32}) {
    for (auto c : kAllShapeClasses) {
      for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto g = generate_shape(c, seed, d);
        ASSERT_EQ(g.resolution(), d);
        EXPECT_TRUE(flood_connected(g)) << class_name(c) << " seed " << seed << " d " << d;
        const double f = static_cast<double>(g.count()) / static_cast<double>(g.size());
        EXPECT_GE(f, 0.01);
        EXPECT_LE(f, 0.6);
      }
    }
  }
}

TEST(Shapes, SeedsVaryTheShape) {
  for (auto c : kAllShapeClasses) {
    int distinct = 0;
    const auto first = generate_shape(c, 0);
    for (std::uint64_t seed = 1; seed < 10; ++seed) distinct += generate_shape(c, seed) != first;
    EXPECT_GE(distinct, 5) << class_name(c);
  }
}

TEST(Shapes, ConnectivityAgreesWithFloodFill) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    BinaryGrid g(4);
    const double density = uniform01(rng) * 0.5;
    for (std::size_t i = 0; i < g.size(); ++i) g.set_flat(i, uniform01(rng) < density);
    EXPECT_EQ(is_connected(g), flood_connected(g));
  }
  EXPECT_FALSE(is_connected(BinaryGrid(3)));
}

TEST(Shapes, DiagonalNeighboursAreNotConnected) {
  BinaryGrid g(3);
  g.set(0, 0, 0, true);
  g.set(1, 1, 0, true);
  EXPECT_FALSE(is_connected(g));
  g.set(1, 0, 0, true);
  EXPECT_TRUE(is_connected(g));
}

TEST(Shapes, RotationAboutZ) {
  BinaryGrid g(4);
  g.set(3, 0, 1, true);
  const auto r = rotate_about_z(g, 1);
  EXPECT_TRUE(r.at(3, 3, 1));  // (x, y) -> (d-1-y, x)
  EXPECT_EQ(r.count(), 1u);
  const auto s = generate_shape(ShapeClass::kChair, 3);
  EXPECT_EQ(rotate_about_z(s, 4), s);
  EXPECT_EQ(rotate_about_z(rotate_about_z(s, 1), 3), s);
  EXPECT_EQ(rotate_about_z(s, -1), rotate_about_z(s, 3));
}

TEST(Shapes, TooSmallResolution) {
  EXPECT_THROW(generate_shape(ShapeClass::kPlane, 0, 3), InvalidArgument);
}

// Thin parts make views differ in content: a table's top slab is much
// larger seen from above than edge-on.
TEST(Shapes, TableTopIsThin) {
  const auto g = generate_shape(ShapeClass::kTable, 9);
  const int d = g.resolution();
  int top_z = -1;
  for (int z = d - 1; z >= 0 && top_z < 0; --z)
    for (int y = 0; y < d && top_z < 0; ++y)
      for (int x = 0; x < d; ++x)
        if (g.at(x, y, z)) {
          top_z = z;
          break;
        }
  ASSERT_GE(top_z, 0);
  int layer = 0;
  for (int y = 0; y < d; ++y)
    for (int x = 0; x < d; ++x) layer += g.at(x, y, top_z);
  EXPECT_GT(layer, 4 * 4);
}
