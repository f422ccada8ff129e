#include <gtest/gtest.h>

#include <cmath>

#include "nvs/loss.hpp"
#include "support.hpp"

using namespace nvs;
using nvs::testing::random_tensor;
using TD = ad::Tensor<double>;

namespace {

TD constant_volumes(std::vector<double> levels, std::size_t n) {
  std::vector<double> v;
  for (double l : levels) v.insert(v.end(), n, l);
  return TD::from({levels.size(), n}, v, true);
}

BinaryGrid random_truth(int d, Rng& rng) {
  BinaryGrid t(d);
  for (std::size_t i = 0; i < t.size(); ++i) t.set_flat(i, uniform01(rng) < 0.4);
  return t;
}

}  // namespace

TEST(Mixture, OneHotSelectsVolume) {
  Rng rng(1);
  auto v = random_tensor<double>({3, 8}, rng, 0, 1);
  const auto r = nvs::mixture(TD::from({3}, {0.0, 1.0, 0.0}), v).r;
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(r.data()[j], v.data()[8 + j]);
}

TEST(Mixture, Examples) {
  auto half = nvs::mixture(TD::from({2}, {0.5, 0.5}), constant_volumes({1.0, 0.0}, 8)).r;
  for (double x : half.data()) EXPECT_EQ(x, 0.5);
  auto mix = nvs::mixture(TD::from({2}, {0.3, 0.7}), constant_volumes({0.2, 0.6}, 8)).r;
  for (double x : mix.data()) EXPECT_NEAR(x, 0.48, 1e-15);
  EXPECT_THROW(nvs::mixture(TD::from({3}, {0.2, 0.3, 0.5}), constant_volumes({0.2, 0.6}, 8)), DimensionError);
  EXPECT_THROW(nvs::mixture(TD::from({1}, {1.0}), TD::zeros({8})), DimensionError);
}

TEST(Mixture, BoundedByComponents) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor<double>({5}, rng, -3, 3, false);
    auto v = random_tensor<double>({5, 27}, rng, 0, 1, false);
    const auto r = nvs::mixture(ad::softmax(logits), v).r;
    for (std::size_t j = 0; j < 27; ++j) {
      double lo = 1, hi = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        lo = std::min(lo, v.data()[i * 27 + j]);
        hi = std::max(hi, v.data()[i * 27 + j]);
      }
      EXPECT_GE(r.data()[j], lo - 1e-15);
      EXPECT_LE(r.data()[j], hi + 1e-15);
    }
  }
}

TEST(Mixture, Linearity) {
  Rng rng(3);
  auto v = random_tensor<double>({4, 16}, rng, 0, 1, false);
  auto p = ad::softmax(random_tensor<double>({4}, rng, -1, 1, false));
  auto q = ad::softmax(random_tensor<double>({4}, rng, -1, 1, false));
  const double a = 0.37;
  std::vector<double> blend(4);
  for (std::size_t i = 0; i < 4; ++i) blend[i] = a * p.data()[i] + (1 - a) * q.data()[i];
  const auto lhs = nvs::mixture(TD::from({4}, blend), v).r;
  const auto rp = nvs::mixture(p, v).r, rq = nvs::mixture(q, v).r;
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(lhs.data()[j], a * rp.data()[j] + (1 - a) * rq.data()[j], 1e-9);
}

TEST(Bce, ClosedForms) {
  Rng rng(4);
  const auto t = random_truth(3, rng);
  const auto half = TD::from({27}, std::vector<double>(27, 0.5));
  EXPECT_NEAR(bce(half, t).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(half, t).item(), 0.693147, 1e-6);
  std::vector<double> exact(27);
  for (std::size_t i = 0; i < 27; ++i) exact[i] = t[i] ? 1.0 : 0.0;
  const double perfect = bce(TD::from({27}, exact), t).item();
  EXPECT_GE(perfect, 0.0);
  EXPECT_LE(perfect, 1e-6);
  EXPECT_THROW(bce(TD::zeros({8}), t), DimensionError);
}

TEST(Bce, NonNegativeAndMatchesFormula) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_truth(3, rng);
    auto r = random_tensor<double>({27}, rng, 0, 1, false);
    double expected = 0;
    for (std::size_t j = 0; j < 27; ++j) {
      const double p = std::clamp(r.data()[j], 1e-7, 1 - 1e-7);
      expected -= t[j] ? std::log(p) : std::log(1 - p);
    }
    expected /= 27;
    const double got = bce(r, t).item();
    EXPECT_NEAR(got, expected, 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(Bce, ClampKeepsLossFinite) {
  BinaryGrid t(2, true);
  const auto r = TD::from({8}, std::vector<double>(8, 0.0), true);
  const auto l = bce(r, t);
  EXPECT_TRUE(std::isfinite(l.item()));
  EXPECT_NEAR(l.item(), -std::log(1e-7), 1e-6);
  ad::backward(l);
  for (double g : const_cast<TD&>(r).grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(LossRouting, ZeroWeightBlocksVolumeGradient) {
  Rng rng(6);
  const auto t = random_truth(3, rng);
  auto v = random_tensor<double>({3, 27}, rng, 0.05, 0.95);
  auto p = TD::from({3}, {0.4, 0.0, 0.6}, true);
  ad::backward(bce(nvs::mixture(p, v).r, t));
  const auto g = v.grad();
  for (std::size_t j = 0; j < 27; ++j) {
    EXPECT_EQ(g[27 + j], 0.0);
    // Gradient on v_i is p_i times the gradient on r.
    EXPECT_NEAR(g[j] / 0.4, g[2 * 27 + j] / 0.6, 1e-12);
  }
  for (double gp : p.grad()) EXPECT_NE(gp, 0.0);
}

TEST(LossRouting, SelectionGradientIsVoxelSum) {
  Rng rng(7);
  const auto t = random_truth(3, rng);
  auto v = random_tensor<double>({4, 27}, rng, 0.05, 0.95, false);
  auto p = TD::from({4}, {0.1, 0.2, 0.3, 0.4}, true);
  const auto r = nvs::mixture(p, v).r;
  ad::backward(bce(r, t));
  for (std::size_t i = 0; i < 4; ++i) {
    double expected = 0;
    for (std::size_t j = 0; j < 27; ++j) {
      const double rj = r.data()[j];
      const double dl_dr = t[j] ? -1.0 / rj : 1.0 / (1.0 - rj);
      expected += dl_dr * v.data()[i * 27 + j];
    }
    EXPECT_NEAR(p.grad()[i], expected / 27, 1e-12);
  }
}

TEST(LossRouting, SelectionGradCheck) {
  Rng rng(8);
  const auto t = random_truth(3, rng);
  auto v = random_tensor<double>({4, 27}, rng, 0.05, 0.95);
  auto logits = random_tensor<double>({4}, rng);
  const auto r = nvs::testing::gradcheck([&] { return bce(nvs::mixture(ad::softmax(logits), v).r, t); },
                                         {{"logits", logits}, {"v", v}});
  EXPECT_LT(r.worst, 1e-4) << r.where;
}
