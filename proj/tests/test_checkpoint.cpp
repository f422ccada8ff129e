#include <gtest/gtest.h>

#include <filesystem>

#include "nvs/checkpoint.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace nvs;
using nvs::testing::tiny_config;

namespace {

bool same_parameters(const Model<float>& a, const Model<float>& b) {
  const auto& pa = a.named_parameters();
  const auto& pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    if (pa[k].first != pb[k].first) return false;
    const auto da = pa[k].second.data();
    const auto db = pb[k].second.data();
    if (!std::equal(da.begin(), da.end(), db.begin(), db.end())) return false;
  }
  return true;
}

// An Adam optimizer with non-trivial moments.
OptimizerSnapshot stepped_adam(Model<float>& model) {
  ad::Optimizer<float> opt({}, model.parameters());
  for (auto& p : model.parameters()) {
    auto g = p.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.01f * static_cast<float>(i % 7) - 0.02f;
  }
  opt.step();
  opt.step();
  return snapshot(opt, 3);
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresParametersAndOptimizer) {
  Model<float> a(tiny_config());
  a.initialize(1);
  const auto snap = stepped_adam(a);
  const auto bytes = encode_checkpoint(a, &snap);

  Model<float> b(tiny_config());
  b.initialize(2);
  ASSERT_FALSE(same_parameters(a, b));
  const auto restored = decode_checkpoint(bytes, b);
  EXPECT_TRUE(same_parameters(a, b));
  ASSERT_TRUE(restored.has_value());
  EXPECT_EQ(*restored, snap);
  EXPECT_EQ(restored->steps, 2u);
  EXPECT_EQ(restored->epochs_done, 3u);
  EXPECT_EQ(encode_checkpoint(b, &*restored), bytes);
}

TEST(Checkpoint, WithoutOptimizerState) {
  Model<float> a(tiny_config());
  a.initialize(5);
  Model<float> b(tiny_config());
  EXPECT_FALSE(decode_checkpoint(encode_checkpoint(a), b).has_value());
  EXPECT_TRUE(same_parameters(a, b));
}

TEST(Checkpoint, SgdStateHasNoMoments) {
  Model<float> a(tiny_config());
  a.initialize(5);
  ad::OptimizerOptions o;
  o.kind = ad::OptimizerKind::kSgd;
  o.learning_rate = 0.5;
  ad::Optimizer<float> opt(o, a.parameters());
  const auto snap = snapshot(opt, 0);
  Model<float> b(tiny_config());
  const auto r = decode_checkpoint(encode_checkpoint(a, &snap), b);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(r->options.kind, ad::OptimizerKind::kSgd);
  EXPECT_EQ(r->options.learning_rate, 0.5);
  EXPECT_TRUE(r->first.empty());
}

TEST(Checkpoint, TruncationIsAParseErrorAndLeavesModelUntouched) {
  Model<float> a(tiny_config());
  a.initialize(1);
  const auto snap = stepped_adam(a);
  const auto bytes = encode_checkpoint(a, &snap);
  Model<float> b(tiny_config());
  b.initialize(2);
  const auto before = encode_checkpoint(b);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, cut), b), ParseError) << cut;
    EXPECT_EQ(encode_checkpoint(b), before) << cut;
  }
}

TEST(Checkpoint, BadMagicVersionAndTrailingBytes) {
  Model<float> a(tiny_config());
  a.initialize(1);
  auto bytes = encode_checkpoint(a);
  Model<float> b(tiny_config());

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic, b), ParseError);

  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_checkpoint(version, b), ParseError);

  EXPECT_THROW(decode_checkpoint(bytes + "x", b), ParseError);
}

TEST(Checkpoint, DigestMismatchIsADimensionError) {
  Model<float> a(tiny_config());
  a.initialize(1);
  const auto bytes = encode_checkpoint(a);
  auto other = tiny_config();
  other.score_channels = 3;
  Model<float> b(other);
  b.initialize(4);
  const auto before = encode_checkpoint(b);
  EXPECT_THROW(decode_checkpoint(bytes, b), DimensionError);
  EXPECT_EQ(encode_checkpoint(b), before);
}

TEST(Checkpoint, MissingFileIsNotFound) {
  Model<float> m(tiny_config());
  const auto path = fs::temp_directory_path() / "nvs_test_checkpoint_missing.nvsm";
  fs::remove(path);
  try {
    load_checkpoint(path, m);
    FAIL() << "expected NotFound";
  } catch (const NotFound& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint not found"), std::string::npos);
  }
}

TEST(Checkpoint, FileRoundTrip) {
  Model<float> a(tiny_config());
  a.initialize(8);
  const auto path = fs::temp_directory_path() / "nvs_test_checkpoint.nvsm";
  save_checkpoint(path, a);
  Model<float> b(tiny_config());
  load_checkpoint(path, b);
  EXPECT_TRUE(same_parameters(a, b));
  fs::remove(path);
}
