#include "irstyle/ops.hpp"

#include <algorithm>
#include <cmath>

#include "irstyle/kernels.hpp"

namespace irstyle {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::identity: return "identity";
    case OpKind::invert: return "invert";
    case OpKind::grayscale: return "grayscale";
    case OpKind::brightness: return "brightness";
    case OpKind::contrast: return "contrast";
    case OpKind::gamma: return "gamma";
    case OpKind::solarize: return "solarize";
    case OpKind::gaussian_blur: return "gaussian-blur";
  }
  return "unknown";
}

std::string_view to_string(ParamScale scale) {
  return scale == ParamScale::linear ? "linear" : "logarithmic";
}

OpRegistry OpRegistry::defaults() {
  OpRegistry r;
  r.add("identity", OpKind::identity, false);
  r.add("invert", OpKind::invert, false);
  r.add("grayscale", OpKind::grayscale, false);
  r.add("brightness", OpKind::brightness, true, -0.5, 0.5, ParamScale::linear);
  r.add("contrast", OpKind::contrast, true, 0.25, 2.0, ParamScale::logarithmic);
  r.add("gamma", OpKind::gamma, true, 0.25, 4.0, ParamScale::logarithmic);
  r.add("solarize", OpKind::solarize, true, 0.0, 1.0, ParamScale::linear);
  r.add("gaussian-blur", OpKind::gaussian_blur, true, 0.1, 2.0, ParamScale::linear);
  return r;
}

int OpRegistry::add(std::string name, OpKind kind, bool has_param, double lo, double hi, ParamScale scale) {
  if (find(name)) fail(ErrorKind::validation, "duplicate operation name '" + name + "'");
  if (has_param) {
    if (!(lo < hi)) fail(ErrorKind::validation, "operation '" + name + "' needs param_lo < param_hi");
    if (scale == ParamScale::logarithmic && !(lo > 0.0)) {
      fail(ErrorKind::validation, "operation '" + name + "' uses a logarithmic scale with a non-positive bound");
    }
  }
  OpDescriptor d;
  d.id = static_cast<int>(ops_.size());
  d.name = std::move(name);
  d.kind = kind;
  d.has_param = has_param;
  d.param_lo = has_param ? lo : 0.0;
  d.param_hi = has_param ? hi : 0.0;
  d.scale = scale;
  ops_.push_back(std::move(d));
  return ops_.back().id;
}

const OpDescriptor& OpRegistry::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= ops_.size()) {
    fail(ErrorKind::usage, "unknown operation id " + std::to_string(id));
  }
  return ops_[static_cast<std::size_t>(id)];
}

std::optional<int> OpRegistry::find(std::string_view name) const {
  for (const OpDescriptor& d : ops_) {
    if (d.name == name) return d.id;
  }
  return std::nullopt;
}

const OpDescriptor& OpRegistry::descriptor(std::string_view name) const {
  const auto id = find(name);
  if (!id) fail(ErrorKind::usage, "unknown operation '" + std::string(name) + "'");
  return ops_[static_cast<std::size_t>(*id)];
}

std::vector<std::string> OpRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(ops_.size());
  for (const OpDescriptor& d : ops_) out.push_back(d.name);
  return out;
}

double param_map(const OpDescriptor& op, double mu01) {
  if (!(mu01 >= 0.0 && mu01 <= 1.0)) {
    fail(ErrorKind::usage, "normalized parameter for '" + op.name + "' outside [0, 1]: " + std::to_string(mu01));
  }
  if (!op.has_param) return 0.0;
  if (op.scale == ParamScale::linear) return op.param_lo + mu01 * (op.param_hi - op.param_lo);
  return op.param_lo * std::pow(op.param_hi / op.param_lo, mu01);
}

double param_unmap(const OpDescriptor& op, double physical) {
  if (!op.has_param) return 0.0;
  if (!(physical >= op.param_lo && physical <= op.param_hi)) {
    fail(ErrorKind::usage, "parameter for '" + op.name + "' outside [" + std::to_string(op.param_lo) + ", " +
                               std::to_string(op.param_hi) + "]: " + std::to_string(physical));
  }
  double mu;
  if (op.scale == ParamScale::linear) {
    mu = (physical - op.param_lo) / (op.param_hi - op.param_lo);
  } else {
    mu = std::log(physical / op.param_lo) / std::log(op.param_hi / op.param_lo);
  }
  return std::clamp(mu, 0.0, 1.0);
}

template <class R>
Var<R> param_map(const OpDescriptor& op, Var<R> mu01) {
  for (R v : mu01.value().data()) {
    if (!(v >= R(0) && v <= R(1))) {
      fail(ErrorKind::usage, "normalized parameter for '" + op.name + "' outside [0, 1]: " + std::to_string(v));
    }
  }
  if (op.scale == ParamScale::linear) {
    return add_scalar(mul_scalar(mu01, op.param_hi - op.param_lo), op.param_lo);
  }
  return mul_scalar(exp(mul_scalar(mu01, std::log(op.param_hi / op.param_lo))), op.param_lo);
}

namespace {

template <class R>
BasicTensor<R> blur_offsets() {
  const auto half = static_cast<int>(kBlurKernelSize / 2);
  BasicTensor<R> t(Shape{kBlurKernelSize, kBlurKernelSize});
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      t[static_cast<std::size_t>((i + half) * static_cast<int>(kBlurKernelSize) + (j + half))] =
          static_cast<R>(-0.5 * static_cast<double>(i * i + j * j));
    }
  }
  return t;
}

void check_image(const Shape& s, std::string_view what) {
  const bool ok = (s.size() == 3 && s[0] == 3) || (s.size() == 4 && s[1] == 3);
  if (!ok) {
    fail(ErrorKind::shape, std::string(what) + ": expects 3 x H x W or B x 3 x H x W, got " + shape_string(s));
  }
}

}  // namespace

Tensor blur_kernel(double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::usage, "blur sigma must be positive");
  const Tensor64 offsets = blur_offsets<double>();
  Tensor k(offsets.shape());
  double total = 0.0;
  std::vector<double> raw(offsets.numel());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = std::exp(offsets[i] / (sigma * sigma));
    total += raw[i];
  }
  for (std::size_t i = 0; i < raw.size(); ++i) k[i] = static_cast<float>(raw[i] / total);
  return k;
}

template <class R>
Var<R> apply_smooth(const OpRegistry& registry, int op_id, Var<R> x, Var<R> mu01) {
  const OpDescriptor& op = registry.at(op_id);
  check_image(x.shape(), op.name);
  Var<R> p;
  if (op.has_param) {
    if (!mu01.valid() || mu01.numel() != 1) {
      fail(ErrorKind::usage, "operation '" + op.name + "' needs a one-element parameter");
    }
    p = param_map(op, mu01);
  }
  Graph<R>& g = x.graph();
  switch (op.kind) {
    case OpKind::identity:
      return x;
    case OpKind::invert:
      return add_scalar(mul_scalar(x, -1.0), 1.0);
    case OpKind::grayscale:
      return repeat_channels(channel_mean(x), 3);
    case OpKind::brightness:
      return clamp(add(x, p), 0.0, 1.0);
    case OpKind::contrast:
      return clamp(add_scalar(mul(add_scalar(x, -0.5), p), 0.5), 0.0, 1.0);
    case OpKind::gamma:
      return clamp(pow(add_scalar(x, kGammaOffset), p), 0.0, 1.0);
    case OpKind::solarize: {
      // x + s (1 - 2x) == (1 - s) x + s (1 - x), s = sigmoid(beta (x - t))
      Var<R> s = sigmoid(mul_scalar(sub(x, p), kSolarizeSharpness));
      Var<R> flip = add_scalar(mul_scalar(x, -2.0), 1.0);
      return clamp(add(x, mul(s, flip)), 0.0, 1.0);
    }
    case OpKind::gaussian_blur: {
      Var<R> offsets = g.constant(blur_offsets<R>());
      Var<R> raw = exp(div(offsets, mul(p, p)));
      Var<R> kernel = div(raw, sum(raw));
      return clamp(depthwise_conv(x, kernel), 0.0, 1.0);
    }
  }
  fail(ErrorKind::usage, "unhandled operation kind");
}

Tensor apply_hard(const OpRegistry& registry, int op_id, const Tensor& x, double mu01) {
  const OpDescriptor& op = registry.at(op_id);
  check_image(x.shape(), op.name);
  const double param = op.has_param ? param_map(op, mu01) : 0.0;
  const auto pf = static_cast<float>(param);
  Tensor out(x.shape());
  const std::size_t n = x.numel();
  auto unit = [](float v) { return std::min(std::max(v, 0.0f), 1.0f); };
  switch (op.kind) {
    case OpKind::identity:
      return x;
    case OpKind::invert:
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0f - x[i];
      return out;
    case OpKind::grayscale: {
      const std::size_t r = x.rank();
      const std::size_t hw = x.dim(r - 2) * x.dim(r - 1);
      const std::size_t images = n / (3 * hw);
      for (std::size_t b = 0; b < images; ++b) {
        const float* src = x.raw() + b * 3 * hw;
        float* dst = out.raw() + b * 3 * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double acc = static_cast<double>(src[i]) + src[hw + i] + src[2 * hw + i];
          const auto m = static_cast<float>(acc / 3.0);
          dst[i] = dst[hw + i] = dst[2 * hw + i] = m;
        }
      }
      return out;
    }
    case OpKind::brightness:
      for (std::size_t i = 0; i < n; ++i) out[i] = unit(x[i] + pf);
      return out;
    case OpKind::contrast:
      for (std::size_t i = 0; i < n; ++i) out[i] = unit((x[i] - 0.5f) * pf + 0.5f);
      return out;
    case OpKind::gamma:
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = unit(std::pow(x[i] + static_cast<float>(kGammaOffset), pf));
      }
      return out;
    case OpKind::solarize:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] < pf ? x[i] : 1.0f - x[i];
      return out;
    case OpKind::gaussian_blur: {
      const Tensor k = blur_kernel(param);
      const std::size_t r = x.rank();
      const std::size_t h = x.dim(r - 2);
      const std::size_t w = x.dim(r - 1);
      kernels::depthwise_forward(x.raw(), n / (h * w), h, w, k.raw(), kBlurKernelSize, out.raw());
      for (std::size_t i = 0; i < n; ++i) out[i] = unit(out[i]);
      return out;
    }
  }
  fail(ErrorKind::usage, "unhandled operation kind");
}

template Var<float> param_map(const OpDescriptor&, Var<float>);
template Var<double> param_map(const OpDescriptor&, Var<double>);
template Var<float> apply_smooth(const OpRegistry&, int, Var<float>, Var<float>);
template Var<double> apply_smooth(const OpRegistry&, int, Var<double>, Var<double>);

}  // namespace irstyle
