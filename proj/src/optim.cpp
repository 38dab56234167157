#include "irstyle/optim.hpp"

#include <algorithm>
#include <cmath>

namespace irstyle {

AdamState AdamState::zeros_like(std::span<const Tensor> params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    fail(ErrorKind::shape, "adam_step: parameter, gradient and state counts differ");
  }
  if (!(lr >= 0.0)) fail(ErrorKind::usage, "adam_step: learning rate must be non-negative");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape() ||
        params[i]->shape() != state.v[i].shape()) {
      fail(ErrorKind::shape, "adam_step: shape mismatch at parameter " + std::to_string(i) + " (" +
                                 shape_string(params[i]->shape()) + " vs " + shape_string(grads[i].shape()) + ")");
    }
  }
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i]->raw();
    const float* g = grads[i].raw();
    double* m = state.m[i].raw();
    double* v = state.v[i].raw();
    for (std::size_t j = 0, n = grads[i].numel(); j < n; ++j) {
      const double gj = g[j];
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * gj;
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * gj * gj;
      const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kAdamEps);
      p[j] = static_cast<float>(static_cast<double>(p[j]) - update);
    }
  }
}

double anneal(Schedule schedule, std::size_t step, std::size_t total) {
  if (total < 1) fail(ErrorKind::usage, "anneal: total steps must be at least 1");
  if (total == 1) return schedule.start;
  const double t = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return schedule.start + (schedule.end - schedule.start) * t;
}

}  // namespace irstyle
