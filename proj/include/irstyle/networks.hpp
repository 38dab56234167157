#pragma once

// Small convolutional scorer used for both the critic and the task head:
// three conv blocks (3x3, leaky rectifier, 2x mean-pool), spatial averaging,
// then a two-layer fully connected head.

#include <cstdint>
#include <span>
#include <vector>

#include "irstyle/autodiff.hpp"

namespace irstyle {

struct ConvNetSpec {
  std::vector<std::size_t> channels{3, 16, 32, 64};
  std::size_t hidden = 32;
  std::size_t outputs = 1;
  std::size_t kernel = 3;
  double slope = 0.2;
};

class ConvNet {
 public:
  ConvNet() = default;
  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
  ConvNet(ConvNetSpec spec, std::uint64_t seed);

  /// Rebuilds a network from saved parameters; shapes must match `spec`.
  static ConvNet from_params(ConvNetSpec spec, std::vector<Tensor> params);

  bool empty() const noexcept { return params_.empty(); }
  const ConvNetSpec& spec() const noexcept { return spec_; }
  std::vector<Tensor>& params() noexcept { return params_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::size_t num_weights() const;

  /// Clips every parameter into [-c, c].
  void clip(double c);
  void fill(float value);

  template <class R>
  std::vector<Var<R>> bind(Graph<R>& graph, bool trainable) const;

  /// x: B x C x H x W with H, W divisible by 8. Returns B x outputs.
  template <class R>
  Var<R> forward(std::span<const Var<R>> params, Var<R> x) const;

 private:
  ConvNetSpec spec_;
  std::vector<Tensor> params_;
};

using CriticNet = ConvNet;
using TaskHead = ConvNet;

CriticNet make_critic(std::uint64_t seed);
TaskHead make_task_head(std::size_t num_classes, std::uint64_t seed);

}  // namespace irstyle
