#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "nvs/autodiff/tensor.hpp"
#include "nvs/model.hpp"
#include "nvs/rng.hpp"

namespace nvs::testing {

// Smallest architecture that still has every stage: 8x8 images, one trunk
// stage, a 4^3 output and a one-level refiner.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.resolution = 4;
  c.trunk_channels = {2};
  c.head_hidden = 4;
  c.decoder_channels = {3};
  c.score_channels = 2;
  c.refiner_channels = 2;
  return c;
}

template <class T>
ad::Tensor<T> random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(lo + (hi - lo) * uniform01(rng));
  return ad::Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::string where;
};

// Relative error with a small absolute floor so that gradients that are
// zero up to round-off compare on an absolute scale.
inline double grad_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences of a scalar function against reverse mode, on up to
// `coords` randomly chosen coordinates of each input.
inline GradCheck gradcheck(const std::function<ad::Tensor<double>()>& f,
                           std::vector<std::pair<std::string, ad::Tensor<double>>> inputs,
                           std::size_t coords = 20, std::uint64_t seed = 7, double h = 1e-5,
                           double floor = 1e-6) {
  for (auto& [_, t] : inputs) {
    t.grad();
    t.zero_grad();
  }
  ad::backward(f());
  GradCheck out;
  Rng rng(seed);
  for (auto& [name, t] : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng);
    if (idx.size() > coords) idx.resize(coords);
    for (auto i : idx) {
      ad::NoGradGuard guard;
      const double x0 = t.data()[i];
      t.data()[i] = x0 + h;
      const double up = f().item();
      t.data()[i] = x0 - h;
      const double down = f().item();
      t.data()[i] = x0;
      const double numeric = (up - down) / (2 * h);
      const double e = grad_error(analytic[i], numeric, floor);
      ++out.checked;
      if (e > out.worst) {
        out.worst = e;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "] analytic %.6e numeric %.6e", analytic[i], numeric);
        out.where = name + "[" + std::to_string(i) + buf;
      }
    }
  }
  return out;
}

// Collapses a tensor to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
inline ad::Tensor<double> probe(const ad::Tensor<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = random_tensor<double>(y.shape(), rng, -1.0, 1.0, false);
  return ad::sum(ad::mul(y, w));
}

}  // namespace nvs::testing
