#pragma once

// Dictionary of analytic image operations. Each operation has a smooth form
// (built on the autodiff graph, differentiable in pixels and parameter) and a
// hard form used for sampling and baselines. Parameters are carried in
// normalized [0, 1] units and mapped to each operation's physical range.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "irstyle/autodiff.hpp"
#include "irstyle/tensor.hpp"

namespace irstyle {

enum class OpKind {
  identity,
  invert,
  grayscale,
  brightness,     // additive shift
  contrast,       // gain about 0.5
  gamma,          // exponent
  solarize,       // inversion above a threshold
  gaussian_blur,  // sigma of a 5x5 kernel
};

enum class ParamScale { linear, logarithmic };

std::string_view to_string(OpKind kind);
std::string_view to_string(ParamScale scale);

struct OpDescriptor {
  int id = 0;
  std::string name;
  OpKind kind = OpKind::identity;
  bool has_param = false;
  double param_lo = 0.0;
  double param_hi = 0.0;
  ParamScale scale = ParamScale::linear;
};

inline constexpr double kSolarizeSharpness = 50.0;
inline constexpr std::size_t kBlurKernelSize = 5;
inline constexpr double kGammaOffset = 1e-6;

class OpRegistry {
 public:
  /// identity, invert, grayscale, brightness, contrast, gamma, solarize,
  /// gaussian-blur, in that order.
  static OpRegistry defaults();

  /// Appends an operation; its id is the current size. Throws on a duplicate
  /// name or an invalid range.
  int add(std::string name, OpKind kind, bool has_param, double lo = 0.0, double hi = 0.0,
          ParamScale scale = ParamScale::linear);

  std::size_t size() const noexcept { return ops_.size(); }
  const OpDescriptor& at(int id) const;
  const OpDescriptor& operator[](std::size_t id) const { return ops_[id]; }
  std::optional<int> find(std::string_view name) const;
  const OpDescriptor& descriptor(std::string_view name) const;
  std::vector<std::string> names() const;

  auto begin() const { return ops_.begin(); }
  auto end() const { return ops_.end(); }

  friend bool operator==(const OpRegistry& a, const OpRegistry& b) { return a.names() == b.names(); }

 private:
  std::vector<OpDescriptor> ops_;
};

/// Normalized [0, 1] -> physical parameter. Throws outside [0, 1].
double param_map(const OpDescriptor& op, double mu01);
/// Physical parameter -> normalized [0, 1]. Throws outside the op's range.
double param_unmap(const OpDescriptor& op, double physical);

template <class R>
Var<R> param_map(const OpDescriptor& op, Var<R> mu01);

/// Normalized 5x5 Gaussian kernel, row-major.
Tensor blur_kernel(double sigma);

/// Smooth form on C x H x W or B x C x H x W (C = 3) input in [0, 1].
/// `mu01` is a one-element variable; it is ignored for operations without a
/// parameter and may then be invalid.
template <class R>
Var<R> apply_smooth(const OpRegistry& registry, int op_id, Var<R> x, Var<R> mu01);

/// Hard form, same layouts. Solarize uses the exact threshold rule.
Tensor apply_hard(const OpRegistry& registry, int op_id, const Tensor& x, double mu01);

}  // namespace irstyle
