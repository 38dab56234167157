#pragma once

// Define-by-run reverse-mode differentiation over BasicTensor<R>.
//
// A Graph is a tape: every primitive computes its value eagerly and appends
// a node. gradients() walks the tape backwards from a scalar node. Graphs are
// meant to be rebuilt for each training step.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irstyle/tensor.hpp"

namespace irstyle {

template <class R>
class Graph;

template <class R>
class Var {
 public:
  Var() = default;
  Var(Graph<R>* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Graph<R>& graph() const { return *graph_; }
  const BasicTensor<R>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }

 private:
  Graph<R>* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class Prim : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  scale_rows,
  add_scalar,
  mul_scalar,
  pow,
  exp,
  log,
  sigmoid,
  clamp,
  abs,
  leaky_relu,
  sum,
  mean,
  sum_axis,
  mean_axis,
  matmul,
  conv2d,
  depthwise_conv,
  mean_pool2,
  softmax,
  log_softmax,
  channel_mean,
  repeat_channels,
  concat,
  slice,
  index,
  reshape,
  sort_columns,
  gated_mixture,
};

std::string_view to_string(Prim op);

/// Gradient of one scalar with respect to every node it reached.
template <class R>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<BasicTensor<R>>> grads,
                     std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Gradient for `v`; zeros of matching shape when `v` was not reached.
  BasicTensor<R> wrt(Var<R> v) const;
  const BasicTensor<R>* find(Var<R> v) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  std::vector<std::optional<BasicTensor<R>>> grads_;
  std::vector<Shape> shapes_;
};

template <class R>
class Graph {
 public:
  struct Node {
    Prim op = Prim::leaf;
    std::vector<std::size_t> inputs;
    BasicTensor<R> value;
    bool requires_grad = false;
    std::string label;
    double a = 0.0;  // scalar attribute (constant, bound, slope)
    double b = 0.0;
    std::size_t axis = 0;
    std::vector<std::size_t> aux;  // permutation or sizes
  };

  /// With `track_branches` every non-smooth primitive folds its branch
  /// decisions into branch_signature(). Used by the gradient checker to
  /// detect perturbations that cross a kink.
  explicit Graph(bool track_branches = false) : track_branches_(track_branches) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<R> leaf(BasicTensor<R> value, bool requires_grad, std::string label = {});
  Var<R> param(BasicTensor<R> value, std::string label = {}) {
    return leaf(std::move(value), true, std::move(label));
  }
  Var<R> constant(BasicTensor<R> value, std::string label = {}) {
    return leaf(std::move(value), false, std::move(label));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const BasicTensor<R>& value(Var<R> v) const { return nodes_.at(v.id()).value; }

  std::vector<BasicTensor<R>> evaluate(std::span<const Var<R>> outputs) const;
  Gradients<R> gradients(Var<R> loss) const;

  std::uint64_t branch_signature() const noexcept { return signature_; }
  bool tracks_branches() const noexcept { return track_branches_; }

  // Used by primitive implementations.
  Var<R> push(Node node);
  void fold_branch(std::uint64_t code);

 private:
  void backward_node(std::size_t id, const BasicTensor<R>& g,
                     std::vector<std::optional<BasicTensor<R>>>& grads) const;

  std::vector<Node> nodes_;
  bool track_branches_;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

template <class R>
const BasicTensor<R>& Var<R>::value() const {
  return graph_->value(*this);
}

// Primitives. Binary elementwise ops broadcast a smaller operand whose shape
// is a suffix of the other's (a single element always broadcasts).

template <class R> Var<R> add(Var<R> a, Var<R> b);
template <class R> Var<R> sub(Var<R> a, Var<R> b);
template <class R> Var<R> mul(Var<R> a, Var<R> b);
template <class R> Var<R> div(Var<R> a, Var<R> b);
/// out[r, ...] = a[r, ...] * s[r] for a 1-D `s` matching a's leading dimension.
template <class R> Var<R> scale_rows(Var<R> a, Var<R> s);
template <class R> Var<R> add_scalar(Var<R> a, double c);
template <class R> Var<R> mul_scalar(Var<R> a, double c);
/// base^exponent with base > 0; exponent has one element or matches base.
template <class R> Var<R> pow(Var<R> base, Var<R> exponent);
template <class R> Var<R> exp(Var<R> a);
template <class R> Var<R> log(Var<R> a);
template <class R> Var<R> sigmoid(Var<R> a);
/// Identity on [lo, hi] including the bounds, zero gradient outside.
template <class R> Var<R> clamp(Var<R> a, double lo, double hi);
template <class R> Var<R> abs(Var<R> a);
template <class R> Var<R> leaky_relu(Var<R> a, double slope);
template <class R> Var<R> sum(Var<R> a);
template <class R> Var<R> mean(Var<R> a);
template <class R> Var<R> sum_axis(Var<R> a, std::size_t axis);
template <class R> Var<R> mean_axis(Var<R> a, std::size_t axis);
template <class R> Var<R> matmul(Var<R> a, Var<R> b);
/// x: B x Cin x H x W, weight: Cout x Cin x k x k (k odd), bias: Cout.
/// Stride 1, reflect padding.
template <class R> Var<R> conv2d(Var<R> x, Var<R> weight, Var<R> bias);
/// One k x k kernel applied to every H x W plane of x, reflect padding.
template <class R> Var<R> depthwise_conv(Var<R> x, Var<R> kernel);
template <class R> Var<R> mean_pool2(Var<R> x);
template <class R> Var<R> softmax(Var<R> a);
template <class R> Var<R> log_softmax(Var<R> a);
/// Mean over the channel axis of C x H x W or B x C x H x W; keeps a unit channel axis.
template <class R> Var<R> channel_mean(Var<R> x);
template <class R> Var<R> repeat_channels(Var<R> x, std::size_t channels);
/// Concatenation along axis 0.
template <class R> Var<R> concat(std::span<const Var<R>> parts);
/// Rows [begin, end) along axis 0.
template <class R> Var<R> slice(Var<R> a, std::size_t begin, std::size_t end);
/// Flat element i as a one-element tensor.
template <class R> Var<R> index(Var<R> a, std::size_t i);
template <class R> Var<R> reshape(Var<R> a, Shape shape);
/// Sorts each column of a 2-D tensor ascending; the backward pass routes
/// gradients through the forward permutation.
template <class R> Var<R> sort_columns(Var<R> a);

/// out[b] = sum_n select[n] * (x[b] + gates[b, n] * (outs[n][b] - x[b]))
/// for x: B x ..., outs[n] shaped like x, gates: B x N, select: N.
template <class R>
Var<R> gated_mixture(Var<R> x, std::span<const Var<R>> outs, Var<R> gates, Var<R> select);

// Gradient checking (always in 64-bit).

struct GradCheckOptions {
  /// Check at most this many coordinates per input (0 = all), chosen by seed.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Inputs to differentiate; empty = all.
  std::vector<bool> wrt;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates skipped because a perturbation crossed a kink, a clamp
  /// bound or a sort tie.
  std::size_t skipped = 0;
  /// Checked coordinates whose gradient was below the finite-difference
  /// resolution, so the error was measured against that floor instead.
  std::size_t noise_limited = 0;
};

inline constexpr double kFiniteDifferenceNoise = 1e3;

using GraphFunction = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

/// Compares reverse-mode gradients of a scalar-valued `fn` at `point` with
/// central differences: max |analytic - numeric| / (|analytic| + floor), with
/// floor = max(1e-8, kFiniteDifferenceNoise * machine epsilon * |f| / epsilon).
GradCheckResult grad_check(const GraphFunction& fn, std::span<const Tensor64> point,
                           double epsilon, const GradCheckOptions& options = {});

}  // namespace irstyle
