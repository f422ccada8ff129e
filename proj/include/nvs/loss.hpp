#pragma once

#include <vector>

#include "nvs/autodiff/ops.hpp"
#include "nvs/error.hpp"
#include "nvs/voxelgrid.hpp"

namespace nvs {

inline constexpr double kBceEpsilon = 1e-7;

template <class T>
struct MixtureResult {
  ad::Tensor<T> r;           // expected volume, shape of one component
  ad::Tensor<T> components;  // [K, ...]
  ad::Tensor<T> weights;     // [K]
};

// r = sum_i p_i v_i. Gradients reach both the selection weights and every
// candidate volume; a zero weight blocks the volume's gradient exactly.
template <class T>
MixtureResult<T> mixture(const ad::Tensor<T>& p, const ad::Tensor<T>& volumes) {
  if (volumes.rank() < 2) throw DimensionError("mixture: volumes must be stacked as [K, ...]");
  if (p.size() != volumes.dim(0)) {
    throw DimensionError("mixture: " + std::to_string(p.size()) + " weights for " +
                         std::to_string(volumes.dim(0)) + " volumes");
  }
  return {ad::mixture(p, volumes), volumes, p};
}

template <class T>
std::vector<float> truth_values(const BinaryGrid& t) {
  std::vector<float> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] ? 1.0f : 0.0f;
  return out;
}

// Mean per-voxel binary cross entropy against a binary ground truth.
template <class T>
ad::Tensor<T> bce(const ad::Tensor<T>& r, const BinaryGrid& truth) {
  if (r.size() != truth.size()) {
    throw DimensionError("bce: prediction has " + std::to_string(r.size()) +
                         " voxels, truth has " + std::to_string(truth.size()));
  }
  const auto t = truth_values<T>(truth);
  return ad::binary_cross_entropy(r, std::span<const float>(t), static_cast<T>(kBceEpsilon));
}

}  // namespace nvs
