#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "nvs/dataset.hpp"

namespace fs = std::filesystem;
using namespace nvs;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nvs_test_dataset_" + name);
  fs::remove_all(p);
  return p;
}

DatasetConfig small(int per_class, std::uint64_t seed) {
  auto c = DatasetConfig::uniform(per_class);
  c.seed = seed;
  c.resolution = 16;
  return c;
}

}  // namespace

TEST(Dataset, SplitCountsFollowFraction) {
  const auto m = plan_dataset(small(10, 0));
  EXPECT_EQ(m.samples.size(), 50u);
  EXPECT_EQ(m.count(Split::kTrain), 40u);
  EXPECT_EQ(m.count(Split::kTest), 10u);
  for (auto cls : kAllShapeClasses) {
    int train = 0;
    for (const auto& e : m.samples) train += e.cls == class_name(cls) && e.split == Split::kTrain;
    EXPECT_EQ(train, 8) << class_name(cls);
  }
}

TEST(Dataset, IdsAreUniqueAndFormatted) {
  const auto m = plan_dataset(small(10, 3));
  std::set<std::string> ids;
  for (const auto& e : m.samples) {
    EXPECT_TRUE(ids.insert(e.sample_id).second) << e.sample_id;
    EXPECT_EQ(e.sample_id.rfind(e.cls + "_", 0), 0u);
    EXPECT_EQ(e.grid_path, "grids/" + e.sample_id + ".vxg");
  }
  EXPECT_TRUE(ids.count("chair_0003"));
}

TEST(Dataset, ManifestIsByteIdenticalForSameSeed) {
  const auto a = dump_json(to_json(plan_dataset(small(10, 42))));
  const auto b = dump_json(to_json(plan_dataset(small(10, 42))));
  EXPECT_EQ(a, b);
}

TEST(Dataset, DifferentSeedChangesSamplesNotCounts) {
  const auto a = plan_dataset(small(10, 1));
  const auto b = plan_dataset(small(10, 2));
  EXPECT_EQ(a.count(Split::kTrain), b.count(Split::kTrain));
  EXPECT_EQ(a.count(Split::kTest), b.count(Split::kTest));
  std::size_t same_seed = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) same_seed += a.samples[i].seed == b.samples[i].seed;
  EXPECT_EQ(same_seed, 0u);
  EXPECT_NE(dump_json(to_json(a)), dump_json(to_json(b)));
}

TEST(Dataset, SplitsAreDisjointAndCoverEverything) {
  const auto m = plan_dataset(small(7, 9));
  std::set<std::string> train, test;
  for (const auto& e : m.samples) (e.split == Split::kTrain ? train : test).insert(e.sample_id);
  for (const auto& id : train) EXPECT_FALSE(test.count(id)) << id;
  EXPECT_EQ(train.size() + test.size(), m.samples.size());
}

TEST(Dataset, ZeroSamplesIsRejected) {
  EXPECT_THROW(plan_dataset(small(0, 0)), InvalidArgument);
  DatasetConfig empty;
  EXPECT_THROW(plan_dataset(empty), InvalidArgument);
}

TEST(Dataset, BadInputsAreRejected) {
  auto c = small(2, 0);
  c.train_fraction = 1.5;
  EXPECT_THROW(plan_dataset(c), InvalidArgument);
  c = small(2, 0);
  c.per_class["teapot"] = 3;
  EXPECT_THROW(plan_dataset(c), InvalidArgument);
  c = small(2, 0);
  c.per_class["chair"] = -1;
  EXPECT_THROW(plan_dataset(c), InvalidArgument);
}

TEST(Dataset, UnevenClassCounts) {
  DatasetConfig c;
  c.per_class = {{"chair", 5}, {"tower", 1}};
  const auto m = plan_dataset(c);
  EXPECT_EQ(m.samples.size(), 6u);
  EXPECT_EQ(m.count(Split::kTrain), 5u);  // round(4.0) + round(0.8)
}

TEST(Dataset, JsonRoundTrip) {
  const auto m = plan_dataset(small(3, 5));
  EXPECT_EQ(manifest_from_json(to_json(m)), m);
  EXPECT_THROW(manifest_from_json(nlohmann::json::parse(R"({"samples": []})")), ParseError);
  nlohmann::json bad = to_json(m);
  bad["samples"][0]["split"] = "validation";
  EXPECT_THROW(manifest_from_json(bad), ParseError);
}

TEST(Dataset, BuildWritesGridsThatRegenerateExactly) {
  const auto dir = scratch("build");
  const auto m = build_dataset(small(2, 11), dir);
  EXPECT_EQ(load_manifest(dir / "manifest.json"), m);
  for (const auto& e : m.samples) {
    const auto path = dir / e.grid_path;
    ASSERT_TRUE(fs::exists(path)) << path;
    const auto bytes = io::read_file(path);
    EXPECT_EQ(bytes, vxg::encode(regenerate(e, m.resolution))) << e.sample_id;
    EXPECT_EQ(vxg::decode_binary(bytes), generate_shape(parse_class(e.cls), e.seed, m.resolution));
  }
  fs::remove_all(dir);
}

TEST(Dataset, RebuildIsByteIdentical) {
  const auto a = scratch("a");
  const auto b = scratch("b");
  build_dataset(small(2, 4), a);
  build_dataset(small(2, 4), b);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    EXPECT_EQ(io::read_file(entry.path()), io::read_file(b / rel)) << rel;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Dataset, LoadSamplesFiltersSplitAndRenders) {
  const auto dir = scratch("load");
  const auto m = build_dataset(small(2, 6), dir);
  const auto sphere = canonical_sphere();
  const auto test = load_samples(m, dir, Split::kTest, sphere, 16);
  EXPECT_EQ(test.size(), m.count(Split::kTest));
  for (const auto& s : test) {
    EXPECT_EQ(s.split, Split::kTest);
    ASSERT_EQ(s.views.size(), sphere.size());
    EXPECT_EQ(s.views[3], render_view(s.truth, sphere[3], 16));
  }
  EXPECT_EQ(load_samples(m, dir, std::nullopt, sphere, 16).size(), m.samples.size());
  fs::remove_all(dir);
}

TEST(Dataset, LoadSamplesRejectsResolutionMismatch) {
  const auto dir = scratch("mismatch");
  auto m = build_dataset(small(1, 6), dir);
  m.resolution = 32;
  EXPECT_THROW(load_samples(m, dir, std::nullopt, canonical_sphere(), 16), DimensionError);
  fs::remove_all(dir);
}
