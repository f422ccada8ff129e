#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nvs/autodiff/tensor.hpp"
#include "nvs/error.hpp"

namespace nvs::ad {

enum class OptimizerKind { kSgd, kAdam };

inline std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw InvalidArgument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// SGD or bias-corrected Adam over a fixed parameter list. Moments are kept in
// parameter order and shaped like their parameters.
template <class T>
class Optimizer {
 public:
  Optimizer(OptimizerOptions opts, std::vector<Tensor<T>> params)
      : opts_(opts), params_(std::move(params)) {
    if (!(opts_.learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (opts_.kind == OptimizerKind::kAdam) {
      for (const auto& p : params_) {
        first_.emplace_back(p.size(), T(0));
        second_.emplace_back(p.size(), T(0));
      }
    }
  }

  void step() {
    for (const auto& p : params_) {
      if (!p.has_grad()) throw InvalidArgument("optimizer step without gradients");
    }
    ++steps_;
    const T lr = static_cast<T>(opts_.learning_rate);
    if (opts_.kind == OptimizerKind::kSgd) {
      for (auto& p : params_) {
        auto v = p.data();
        auto g = p.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
      }
    } else {
      const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
      const T eps = static_cast<T>(opts_.epsilon);
      const T c1 = static_cast<T>(1.0 - std::pow(opts_.beta1, static_cast<double>(steps_)));
      const T c2 = static_cast<T>(1.0 - std::pow(opts_.beta2, static_cast<double>(steps_)));
      for (std::size_t k = 0; k < params_.size(); ++k) {
        auto v = params_[k].data();
        auto g = params_[k].grad();
        auto& m = first_[k];
        auto& s = second_[k];
        for (std::size_t i = 0; i < v.size(); ++i) {
          m[i] = b1 * m[i] + (T(1) - b1) * g[i];
          s[i] = b2 * s[i] + (T(1) - b2) * g[i] * g[i];
          const T mh = m[i] / c1;
          const T sh = s[i] / c2;
          v[i] -= lr * mh / (std::sqrt(sh) + eps);
        }
      }
    }
    zero_grad();
  }

  void zero_grad() {
    for (auto& p : params_) {
      p.grad();  // allocate
      p.zero_grad();
    }
  }

  const OptimizerOptions& options() const { return opts_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  std::vector<std::vector<T>>& first_moments() { return first_; }
  std::vector<std::vector<T>>& second_moments() { return second_; }
  const std::vector<std::vector<T>>& first_moments() const { return first_; }
  const std::vector<std::vector<T>>& second_moments() const { return second_; }

  // Restores counters and moments saved by a checkpoint.
  void restore(std::uint64_t steps, std::vector<std::vector<T>> first,
               std::vector<std::vector<T>> second) {
    if (opts_.kind == OptimizerKind::kAdam) {
      if (first.size() != params_.size() || second.size() != params_.size()) {
        throw DimensionError("optimizer state has wrong parameter count");
      }
      for (std::size_t k = 0; k < params_.size(); ++k) {
        if (first[k].size() != params_[k].size() || second[k].size() != params_[k].size()) {
          throw DimensionError("optimizer moment shape mismatch");
        }
      }
      first_ = std::move(first);
      second_ = std::move(second);
    }
    steps_ = steps;
  }

 private:
  OptimizerOptions opts_;
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> first_, second_;
  std::uint64_t steps_ = 0;
};

}  // namespace nvs::ad
