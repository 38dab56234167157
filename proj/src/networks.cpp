#include "irstyle/networks.hpp"

#include <algorithm>
#include <cmath>

#include "irstyle/rng.hpp"

namespace irstyle {

ConvNet::ConvNet(ConvNetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.channels.size() < 2 || spec_.outputs == 0 || spec_.hidden == 0 || spec_.kernel % 2 == 0) {
    fail(ErrorKind::usage, "invalid network layout");
  }
  Rng rng(derive_seed(seed, "convnet-init"));
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
  };
  const std::size_t k = spec_.kernel;
  for (std::size_t i = 0; i + 1 < spec_.channels.size(); ++i) {
    const std::size_t cin = spec_.channels[i];
    const std::size_t cout = spec_.channels[i + 1];
    params_.push_back(uniform(Shape{cout, cin, k, k}, cin * k * k));
    params_.push_back(Tensor(Shape{cout}));
  }
  const std::size_t features = spec_.channels.back();
  params_.push_back(uniform(Shape{features, spec_.hidden}, features));
  params_.push_back(Tensor(Shape{spec_.hidden}));
  params_.push_back(uniform(Shape{spec_.hidden, spec_.outputs}, spec_.hidden));
  params_.push_back(Tensor(Shape{spec_.outputs}));
}

ConvNet ConvNet::from_params(ConvNetSpec spec, std::vector<Tensor> params) {
  ConvNet net(spec, 0);
  if (params.size() != net.params_.size()) fail(ErrorKind::data, "network parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != net.params_[i].shape()) {
      fail(ErrorKind::data, "network parameter " + std::to_string(i) + " has shape " + shape_string(params[i].shape()) +
                                ", expected " + shape_string(net.params_[i].shape()));
    }
  }
  net.params_ = std::move(params);
  return net;
}

std::size_t ConvNet::num_weights() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += t.numel();
  return n;
}

void ConvNet::clip(double c) {
  const auto fc = static_cast<float>(c);
  for (Tensor& t : params_) {
    for (float& v : t.data()) v = std::clamp(v, -fc, fc);
  }
}

void ConvNet::fill(float value) {
  for (Tensor& t : params_) std::fill(t.data().begin(), t.data().end(), value);
}

template <class R>
std::vector<Var<R>> ConvNet::bind(Graph<R>& graph, bool trainable) const {
  std::vector<Var<R>> out;
  out.reserve(params_.size());
  for (const Tensor& t : params_) out.push_back(graph.leaf(t.cast<R>(), trainable));
  return out;
}

template <class R>
Var<R> ConvNet::forward(std::span<const Var<R>> params, Var<R> x) const {
  if (params.size() != params_.size()) fail(ErrorKind::usage, "network parameter count mismatch");
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != spec_.channels.front()) {
    fail(ErrorKind::shape, "network input must be B x " + std::to_string(spec_.channels.front()) +
                               " x H x W, got " + shape_string(s));
  }
  const std::size_t blocks = spec_.channels.size() - 1;
  const std::size_t factor = std::size_t{1} << blocks;
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    fail(ErrorKind::shape, "network input spatial size must be divisible by " + std::to_string(factor));
  }
  Var<R> h = x;
  std::size_t p = 0;
  for (std::size_t b = 0; b < blocks; ++b, p += 2) {
    h = mean_pool2(leaky_relu(conv2d(h, params[p], params[p + 1]), spec_.slope));
  }
  const Shape hs = h.shape();
  h = mean_axis(reshape(h, Shape{hs[0], hs[1], hs[2] * hs[3]}), 2);
  h = leaky_relu(add(matmul(h, params[p]), params[p + 1]), spec_.slope);
  return add(matmul(h, params[p + 2]), params[p + 3]);
}

CriticNet make_critic(std::uint64_t seed) {
  return ConvNet(ConvNetSpec{}, derive_seed(seed, "critic"));
}

TaskHead make_task_head(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 1) fail(ErrorKind::usage, "task head needs at least one class");
  ConvNetSpec spec;
  spec.outputs = num_classes;
  return ConvNet(spec, derive_seed(seed, "task-head"));
}

template std::vector<Var<float>> ConvNet::bind(Graph<float>&, bool) const;
template std::vector<Var<double>> ConvNet::bind(Graph<double>&, bool) const;
template Var<float> ConvNet::forward(std::span<const Var<float>>, Var<float>) const;
template Var<double> ConvNet::forward(std::span<const Var<double>>, Var<double>) const;

}  // namespace irstyle
