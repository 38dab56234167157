#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "irstyle/tensor.hpp"

namespace irstyle {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Adam moments for a list of parameter tensors, kept in 64-bit.
struct AdamState {
  std::vector<Tensor64> m;
  std::vector<Tensor64> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(std::span<const Tensor> params);
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update. lr may be zero (frozen parameters).
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr);

struct Schedule {
  double start = 1.0;
  double end = 1.0;
  bool operator==(const Schedule&) const = default;
};

/// start + (end - start) * step / (total - 1); `start` when total == 1.
double anneal(Schedule schedule, std::size_t step, std::size_t total);

}  // namespace irstyle
