#include "irstyle/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "irstyle/kernels.hpp"
#include "irstyle/rng.hpp"

namespace irstyle {

std::string_view to_string(Prim op) {
  switch (op) {
    case Prim::leaf: return "leaf";
    case Prim::add: return "add";
    case Prim::sub: return "sub";
    case Prim::mul: return "mul";
    case Prim::div: return "div";
    case Prim::scale_rows: return "scale_rows";
    case Prim::add_scalar: return "add_scalar";
    case Prim::mul_scalar: return "mul_scalar";
    case Prim::pow: return "pow";
    case Prim::exp: return "exp";
    case Prim::log: return "log";
    case Prim::sigmoid: return "sigmoid";
    case Prim::clamp: return "clamp";
    case Prim::abs: return "abs";
    case Prim::leaky_relu: return "leaky_relu";
    case Prim::sum: return "sum";
    case Prim::mean: return "mean";
    case Prim::sum_axis: return "sum_axis";
    case Prim::mean_axis: return "mean_axis";
    case Prim::matmul: return "matmul";
    case Prim::conv2d: return "conv2d";
    case Prim::depthwise_conv: return "depthwise_conv";
    case Prim::mean_pool2: return "mean_pool2";
    case Prim::softmax: return "softmax";
    case Prim::log_softmax: return "log_softmax";
    case Prim::channel_mean: return "channel_mean";
    case Prim::repeat_channels: return "repeat_channels";
    case Prim::concat: return "concat";
    case Prim::slice: return "slice";
    case Prim::index: return "index";
    case Prim::reshape: return "reshape";
    case Prim::sort_columns: return "sort_columns";
    case Prim::gated_mixture: return "gated_mixture";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(Prim op, std::size_t node_id, const std::string& what) {
  fail(ErrorKind::shape, "node " + std::to_string(node_id) + " (" + std::string(to_string(op)) +
                             "): " + what);
}

template <class R>
void same_graph(Var<R> a, Var<R> b) {
  if (&a.graph() != &b.graph()) fail(ErrorKind::usage, "operands belong to different graphs");
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

/// Output shape of a broadcasting binary op, or nullopt when incompatible.
std::optional<Shape> broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t an = shape_numel(a);
  const std::size_t bn = shape_numel(b);
  if (a == b) return a;
  if (bn == 1) return a;
  if (an == 1) return b;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  return std::nullopt;
}

template <class R>
R stable_sigmoid(R x) {
  if (x >= R(0)) {
    const R z = std::exp(-x);
    return R(1) / (R(1) + z);
  }
  const R z = std::exp(x);
  return z / (R(1) + z);
}

template <class R>
BasicTensor<R>& slot_for(std::optional<BasicTensor<R>>& slot, const Shape& shape) {
  if (!slot) slot.emplace(shape, R(0));
  return *slot;
}

/// dst[i % dst.numel()] += term(i) for i < out_numel, summed in 64-bit when
/// dst was broadcast.
template <class R, class F>
void reduce_broadcast(BasicTensor<R>& dst, std::size_t out_numel, F term) {
  const std::size_t dn = dst.numel();
  if (dn == out_numel) {
    for (std::size_t i = 0; i < out_numel; ++i) dst[i] += term(i);
    return;
  }
  std::vector<double> acc(dn, 0.0);
  for (std::size_t i = 0; i < out_numel; ++i) acc[i % dn] += static_cast<double>(term(i));
  for (std::size_t j = 0; j < dn; ++j) dst[j] += static_cast<R>(acc[j]);
}

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradients

template <class R>
BasicTensor<R> Gradients<R>::wrt(Var<R> v) const {
  if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
  if (v.id() < shapes_.size()) return BasicTensor<R>(shapes_[v.id()], R(0));
  return BasicTensor<R>(v.shape(), R(0));
}

template <class R>
const BasicTensor<R>* Gradients<R>::find(Var<R> v) const {
  if (v.id() < grads_.size() && grads_[v.id()]) return &*grads_[v.id()];
  return nullptr;
}

// ---------------------------------------------------------------------------
// Graph

template <class R>
Var<R> Graph<R>::leaf(BasicTensor<R> value, bool requires_grad, std::string label) {
  Node n;
  n.op = Prim::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.label = std::move(label);
  return push(std::move(n));
}

template <class R>
Var<R> Graph<R>::push(Node node) {
  if (node.op != Prim::leaf) {
    node.requires_grad = false;
    for (std::size_t in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var<R>(this, nodes_.size() - 1);
}

template <class R>
void Graph<R>::fold_branch(std::uint64_t code) {
  signature_ = fnv(signature_, code);
}

template <class R>
std::vector<BasicTensor<R>> Graph<R>::evaluate(std::span<const Var<R>> outputs) const {
  std::vector<BasicTensor<R>> out;
  out.reserve(outputs.size());
  for (const Var<R>& v : outputs) {
    if (&v.graph() != this) fail(ErrorKind::usage, "evaluate: variable from another graph");
    out.push_back(nodes_.at(v.id()).value);
  }
  return out;
}

template <class R>
Gradients<R> Graph<R>::gradients(Var<R> loss) const {
  if (&loss.graph() != this) fail(ErrorKind::usage, "gradients: loss from another graph");
  const Node& root = nodes_.at(loss.id());
  if (root.value.numel() != 1) {
    shape_error(root.op, loss.id(), "loss must be scalar, got " + shape_string(root.value.shape()));
  }
  std::vector<std::optional<BasicTensor<R>>> grads(loss.id() + 1);
  grads[loss.id()].emplace(root.value.shape(), R(1));
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!grads[id] || !n.requires_grad || n.op == Prim::leaf) continue;
    backward_node(id, *grads[id], grads);
    // Interior gradients are kept: callers may ask for them.
  }
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& n : nodes_) shapes.push_back(n.value.shape());
  grads.resize(nodes_.size());
  for (std::size_t id = 0; id < grads.size(); ++id) {
    if (grads[id] && !nodes_[id].requires_grad) grads[id].reset();
  }
  return Gradients<R>(std::move(grads), std::move(shapes));
}

template <class R>
void Graph<R>::backward_node(std::size_t id, const BasicTensor<R>& g,
                             std::vector<std::optional<BasicTensor<R>>>& grads) const {
  const Node& n = nodes_[id];
  const std::size_t on = n.value.numel();
  auto needs = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto in = [&](std::size_t k) -> const BasicTensor<R>& { return nodes_[n.inputs[k]].value; };
  auto slot = [&](std::size_t k) -> BasicTensor<R>& {
    return slot_for(grads[n.inputs[k]], in(k).shape());
  };

  switch (n.op) {
    case Prim::leaf:
      return;

    case Prim::add:
    case Prim::sub: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        BasicTensor<R>& dst = slot(k);
        const R sign = (n.op == Prim::sub && k == 1) ? R(-1) : R(1);
        if (dst.numel() == on) {
          kernels::axpy(sign, g.raw(), dst.raw(), on);
        } else {
          reduce_broadcast(dst, on, [&](std::size_t i) { return sign * g[i]; });
        }
      }
      return;
    }

    case Prim::mul: {
      const BasicTensor<R>& a = in(0);
      const BasicTensor<R>& b = in(1);
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        BasicTensor<R>& dst = slot(k);
        const BasicTensor<R>& other = k == 0 ? b : a;
        if (dst.numel() == on && other.numel() == on) {
          kernels::mul_acc(g.raw(), other.raw(), dst.raw(), on);
          continue;
        }
        const std::size_t nn = other.numel();
        reduce_broadcast(dst, on, [&](std::size_t i) { return g[i] * other[i % nn]; });
      }
      return;
    }

    case Prim::div: {
      const BasicTensor<R>& b = in(1);
      const std::size_t bn = b.numel();
      if (needs(0)) {
        reduce_broadcast(slot(0), on, [&](std::size_t i) { return g[i] / b[i % bn]; });
      }
      if (needs(1)) {
        reduce_broadcast(slot(1), on, [&](std::size_t i) { return -g[i] * n.value[i] / b[i % bn]; });
      }
      return;
    }

    case Prim::scale_rows: {
      const BasicTensor<R>& a = in(0);
      const BasicTensor<R>& s = in(1);
      const std::size_t rows = s.numel();
      const std::size_t inner = on / rows;
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        for (std::size_t r = 0; r < rows; ++r) {
          kernels::axpy(s[r], g.raw() + r * inner, dst.raw() + r * inner, inner);
        }
      }
      if (needs(1)) {
        BasicTensor<R>& dst = slot(1);
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          const R* gr = g.raw() + r * inner;
          const R* ar = a.raw() + r * inner;
          for (std::size_t i = 0; i < inner; ++i) acc += static_cast<double>(gr[i]) * ar[i];
          dst[r] += static_cast<R>(acc);
        }
      }
      return;
    }

    case Prim::add_scalar:
      if (needs(0)) kernels::axpy(R(1), g.raw(), slot(0).raw(), on);
      return;

    case Prim::mul_scalar:
      if (needs(0)) kernels::axpy(static_cast<R>(n.a), g.raw(), slot(0).raw(), on);
      return;

    case Prim::pow: {
      const BasicTensor<R>& base = in(0);
      const BasicTensor<R>& ex = in(1);
      const std::size_t en = ex.numel();
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        for (std::size_t i = 0; i < on; ++i) dst[i] += g[i] * ex[i % en] * n.value[i] / base[i];
      }
      if (needs(1)) {
        BasicTensor<R>& dst = slot(1);
        if (en == 1) {
          double acc = 0.0;
          for (std::size_t i = 0; i < on; ++i) {
            acc += static_cast<double>(g[i]) * n.value[i] * std::log(static_cast<double>(base[i]));
          }
          dst[0] += static_cast<R>(acc);
        } else {
          for (std::size_t i = 0; i < on; ++i) dst[i] += g[i] * n.value[i] * std::log(base[i]);
        }
      }
      return;
    }

    case Prim::exp:
      if (needs(0)) kernels::mul_acc(g.raw(), n.value.raw(), slot(0).raw(), on);
      return;

    case Prim::log:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        for (std::size_t i = 0; i < on; ++i) dst[i] += g[i] / in(0)[i];
      }
      return;

    case Prim::sigmoid:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        for (std::size_t i = 0; i < on; ++i) {
          const R y = n.value[i];
          dst[i] += g[i] * y * (R(1) - y);
        }
      }
      return;

    case Prim::clamp:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const BasicTensor<R>& x = in(0);
        const R lo = static_cast<R>(n.a);
        const R hi = static_cast<R>(n.b);
        for (std::size_t i = 0; i < on; ++i) {
          if (x[i] >= lo && x[i] <= hi) dst[i] += g[i];
        }
      }
      return;

    case Prim::abs:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const BasicTensor<R>& x = in(0);
        for (std::size_t i = 0; i < on; ++i) {
          if (x[i] > R(0)) dst[i] += g[i];
          else if (x[i] < R(0)) dst[i] -= g[i];
        }
      }
      return;

    case Prim::leaky_relu:
      if (needs(0)) {
        kernels::leaky_relu_backward(in(0).raw(), g.raw(), slot(0).raw(), on, static_cast<R>(n.a));
      }
      return;

    case Prim::sum:
    case Prim::mean:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const std::size_t dn = dst.numel();
        const R v = n.op == Prim::sum ? g[0] : static_cast<R>(static_cast<double>(g[0]) / static_cast<double>(dn));
        for (std::size_t i = 0; i < dn; ++i) dst[i] += v;
      }
      return;

    case Prim::sum_axis:
    case Prim::mean_axis:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const Shape& s = in(0).shape();
        const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(n.axis)));
        const std::size_t len = s[n.axis];
        const std::size_t inner = dst.numel() / (outer * len);
        const R f = n.op == Prim::sum_axis ? R(1) : static_cast<R>(1.0 / static_cast<double>(len));
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t l = 0; l < len; ++l) {
            kernels::axpy(f, g.raw() + o * inner, dst.raw() + (o * len + l) * inner, inner);
          }
        }
      }
      return;

    case Prim::matmul: {
      const BasicTensor<R>& a = in(0);
      const BasicTensor<R>& b = in(1);
      const std::size_t m = a.dim(0);
      const std::size_t k = a.dim(1);
      const std::size_t nn = b.dim(1);
      if (needs(0)) kernels::gemm(false, true, m, k, nn, g.raw(), b.raw(), slot(0).raw(), true);
      if (needs(1)) kernels::gemm(true, false, k, nn, m, a.raw(), g.raw(), slot(1).raw(), true);
      return;
    }

    case Prim::conv2d: {
      const BasicTensor<R>& x = in(0);
      const BasicTensor<R>& w = in(1);
      const std::size_t batch = x.dim(0);
      const std::size_t cin = x.dim(1);
      const std::size_t h = x.dim(2);
      const std::size_t wd = x.dim(3);
      const std::size_t cout = w.dim(0);
      const std::size_t ks = w.dim(2);
      const std::size_t hw = h * wd;
      const std::size_t ckk = cin * ks * ks;
      std::vector<R> cols(ckk * hw);
      std::vector<R> gcols(ckk * hw);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const R* gout = g.raw() + bi * cout * hw;
        if (needs(1)) {
          kernels::ref::im2col(x.raw() + bi * cin * hw, cin, h, wd, ks, cols.data());
          kernels::gemm(false, true, cout, ckk, hw, gout, cols.data(), slot(1).raw(), true);
        }
        if (needs(0)) {
          kernels::gemm(true, false, ckk, hw, cout, w.raw(), gout, gcols.data(), false);
          kernels::ref::col2im(gcols.data(), cin, h, wd, ks, slot(0).raw() + bi * cin * hw);
        }
        if (needs(2)) {
          BasicTensor<R>& gb = slot(2);
          for (std::size_t c = 0; c < cout; ++c) {
            gb[c] += static_cast<R>(kernels::sum(gout + c * hw, hw));
          }
        }
      }
      return;
    }

    case Prim::depthwise_conv: {
      const BasicTensor<R>& x = in(0);
      const BasicTensor<R>& kern = in(1);
      const std::size_t r = x.rank();
      const std::size_t h = x.dim(r - 2);
      const std::size_t w = x.dim(r - 1);
      const std::size_t planes = x.numel() / (h * w);
      R* gx = needs(0) ? slot(0).raw() : nullptr;
      R* gk = needs(1) ? slot(1).raw() : nullptr;
      kernels::ref::depthwise_backward(x.raw(), planes, h, w, kern.raw(), kern.dim(0), g.raw(), gx, gk);
      return;
    }

    case Prim::mean_pool2:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const Shape& s = in(0).shape();
        const std::size_t h = s[s.size() - 2];
        const std::size_t w = s[s.size() - 1];
        const std::size_t planes = dst.numel() / (h * w);
        const std::size_t oh = h / 2;
        const std::size_t ow = w / 2;
        for (std::size_t p = 0; p < planes; ++p) {
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
              const R v = g[(p * oh + y) * ow + x] * R(0.25);
              R* base = dst.raw() + p * h * w + (2 * y) * w + 2 * x;
              base[0] += v;
              base[1] += v;
              base[w] += v;
              base[w + 1] += v;
            }
          }
        }
      }
      return;

    case Prim::softmax:
    case Prim::log_softmax:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const std::size_t len = n.value.shape().back();
        const std::size_t rows = on / len;
        for (std::size_t r = 0; r < rows; ++r) {
          const R* y = n.value.raw() + r * len;
          const R* gr = g.raw() + r * len;
          R* d = dst.raw() + r * len;
          if (n.op == Prim::softmax) {
            double dot = 0.0;
            for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(gr[i]) * y[i];
            for (std::size_t i = 0; i < len; ++i) d[i] += y[i] * (gr[i] - static_cast<R>(dot));
          } else {
            double gs = 0.0;
            for (std::size_t i = 0; i < len; ++i) gs += gr[i];
            for (std::size_t i = 0; i < len; ++i) d[i] += gr[i] - std::exp(y[i]) * static_cast<R>(gs);
          }
        }
      }
      return;

    case Prim::channel_mean:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const Shape& s = in(0).shape();
        const std::size_t c = s[s.size() - 3];
        const std::size_t hw = s[s.size() - 2] * s[s.size() - 1];
        const std::size_t outer = dst.numel() / (c * hw);
        const R f = static_cast<R>(1.0 / static_cast<double>(c));
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            kernels::axpy(f, g.raw() + o * hw, dst.raw() + (o * c + ch) * hw, hw);
          }
        }
      }
      return;

    case Prim::repeat_channels:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const std::size_t c = n.aux[0];
        const Shape& s = in(0).shape();
        const std::size_t hw = s[s.size() - 2] * s[s.size() - 1];
        const std::size_t outer = dst.numel() / hw;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            kernels::axpy(R(1), g.raw() + (o * c + ch) * hw, dst.raw() + o * hw, hw);
          }
        }
      }
      return;

    case Prim::concat: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = in(k).numel();
        if (needs(k)) kernels::axpy(R(1), g.raw() + offset, slot(k).raw(), len);
        offset += len;
      }
      return;
    }

    case Prim::gated_mixture: {
      // inputs: x, gates (B x N), select (N), outs[0..N)
      const BasicTensor<R>& x = in(0);
      const BasicTensor<R>& gates = in(1);
      const BasicTensor<R>& select = in(2);
      const std::size_t ops = select.numel();
      const std::size_t rows = x.dim(0);
      const std::size_t inner = on / rows;
      std::vector<double> dsel(ops, 0.0);
      std::vector<double> dgate(rows * ops, 0.0);
      for (std::size_t b = 0; b < rows; ++b) {
        const R* gb = g.raw() + b * inner;
        const double gx = kernels::ref::dot(gb, x.raw() + b * inner, inner);
        double cx = 0.0;
        for (std::size_t k = 0; k < ops; ++k) {
          const double beta = gates[b * ops + k];
          const double gy = kernels::ref::dot(gb, in(3 + k).raw() + b * inner, inner);
          dsel[k] += (1.0 - beta) * gx + beta * gy;
          dgate[b * ops + k] = static_cast<double>(select[k]) * (gy - gx);
          cx += static_cast<double>(select[k]) * (1.0 - beta);
          if (needs(3 + k)) {
            kernels::axpy(static_cast<R>(static_cast<double>(select[k]) * beta), gb, slot(3 + k).raw() + b * inner, inner);
          }
        }
        if (needs(0)) kernels::axpy(static_cast<R>(cx), gb, slot(0).raw() + b * inner, inner);
      }
      if (needs(1)) {
        BasicTensor<R>& dst = slot(1);
        for (std::size_t i = 0; i < dgate.size(); ++i) dst[i] += static_cast<R>(dgate[i]);
      }
      if (needs(2)) {
        BasicTensor<R>& dst = slot(2);
        for (std::size_t k = 0; k < ops; ++k) dst[k] += static_cast<R>(dsel[k]);
      }
      return;
    }

    case Prim::slice:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const std::size_t row = in(0).numel() / in(0).dim(0);
        kernels::axpy(R(1), g.raw(), dst.raw() + n.aux[0] * row, on);
      }
      return;

    case Prim::index:
      if (needs(0)) slot(0)[n.aux[0]] += g[0];
      return;

    case Prim::reshape:
      if (needs(0)) kernels::axpy(R(1), g.raw(), slot(0).raw(), on);
      return;

    case Prim::sort_columns:
      if (needs(0)) {
        BasicTensor<R>& dst = slot(0);
        const std::size_t rows = n.value.dim(0);
        const std::size_t cols = n.value.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            dst[n.aux[r * cols + c] * cols + c] += g[r * cols + c];
          }
        }
      }
      return;
  }
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

template <class R>
using NodeT = typename Graph<R>::Node;

template <class R>
NodeT<R> make_node(Prim op, std::initializer_list<Var<R>> inputs) {
  NodeT<R> node;
  node.op = op;
  for (const Var<R>& v : inputs) node.inputs.push_back(v.id());
  return node;
}

template <class R>
Var<R> binary(Prim op, Var<R> a, Var<R> b) {
  same_graph(a, b);
  Graph<R>& g = a.graph();
  const BasicTensor<R>& av = a.value();
  const BasicTensor<R>& bv = b.value();
  const auto out_shape = broadcast_shape(av.shape(), bv.shape());
  if (!out_shape) {
    shape_error(op, g.size(), "incompatible shapes " + shape_string(av.shape()) + " and " +
                                  shape_string(bv.shape()));
  }
  BasicTensor<R> out(*out_shape);
  const std::size_t on = out.numel();
  const std::size_t an = av.numel();
  const std::size_t bn = bv.numel();
  if (an == on && bn == on) {
    switch (op) {
      case Prim::add: kernels::add(av.raw(), bv.raw(), out.raw(), on); break;
      case Prim::sub: kernels::sub(av.raw(), bv.raw(), out.raw(), on); break;
      case Prim::mul: kernels::mul(av.raw(), bv.raw(), out.raw(), on); break;
      default:
        for (std::size_t i = 0; i < on; ++i) out[i] = av[i] / bv[i];
    }
  } else {
    for (std::size_t i = 0; i < on; ++i) {
      const R x = av[i % an];
      const R y = bv[i % bn];
      switch (op) {
        case Prim::add: out[i] = x + y; break;
        case Prim::sub: out[i] = x - y; break;
        case Prim::mul: out[i] = x * y; break;
        default: out[i] = x / y;
      }
    }
  }
  auto node = make_node<R>(op, {a, b});
  node.value = std::move(out);
  return g.push(std::move(node));
}

template <class R, class F>
Var<R> unary(Prim op, Var<R> a, F f) {
  const BasicTensor<R>& av = a.value();
  BasicTensor<R> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  auto node = make_node<R>(op, {a});
  node.value = std::move(out);
  return a.graph().push(std::move(node));
}

template <class R>
void require_rank(Prim op, Var<R> a, std::size_t rank, const char* what) {
  if (a.value().rank() != rank) {
    shape_error(op, a.graph().size(), std::string(what) + " must have rank " + std::to_string(rank) +
                                          ", got " + shape_string(a.shape()));
  }
}

}  // namespace

template <class R>
Var<R> add(Var<R> a, Var<R> b) { return binary(Prim::add, a, b); }
template <class R>
Var<R> sub(Var<R> a, Var<R> b) { return binary(Prim::sub, a, b); }
template <class R>
Var<R> mul(Var<R> a, Var<R> b) { return binary(Prim::mul, a, b); }
template <class R>
Var<R> div(Var<R> a, Var<R> b) { return binary(Prim::div, a, b); }

template <class R>
Var<R> scale_rows(Var<R> a, Var<R> s) {
  same_graph(a, s);
  const BasicTensor<R>& av = a.value();
  const BasicTensor<R>& sv = s.value();
  if (sv.rank() != 1 || av.rank() < 1 || av.dim(0) != sv.dim(0)) {
    shape_error(Prim::scale_rows, a.graph().size(),
                "row scales " + shape_string(sv.shape()) + " do not match " + shape_string(av.shape()));
  }
  const std::size_t rows = sv.numel();
  const std::size_t inner = av.numel() / std::max<std::size_t>(rows, 1);
  BasicTensor<R> out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    kernels::scale(sv[r], av.raw() + r * inner, out.raw() + r * inner, inner);
  }
  auto node = make_node<R>(Prim::scale_rows, {a, s});
  node.value = std::move(out);
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> add_scalar(Var<R> a, double c) {
  const R rc = static_cast<R>(c);
  return unary(Prim::add_scalar, a, [rc](R x) { return x + rc; });
}

template <class R>
Var<R> mul_scalar(Var<R> a, double c) {
  const BasicTensor<R>& av = a.value();
  BasicTensor<R> out(av.shape());
  kernels::scale(static_cast<R>(c), av.raw(), out.raw(), av.numel());
  auto node = make_node<R>(Prim::mul_scalar, {a});
  node.value = std::move(out);
  node.a = static_cast<double>(static_cast<R>(c));
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> pow(Var<R> base, Var<R> exponent) {
  same_graph(base, exponent);
  const BasicTensor<R>& bv = base.value();
  const BasicTensor<R>& ev = exponent.value();
  if (ev.numel() != 1 && ev.shape() != bv.shape()) {
    shape_error(Prim::pow, base.graph().size(),
                "exponent " + shape_string(ev.shape()) + " does not match base " + shape_string(bv.shape()));
  }
  BasicTensor<R> out(bv.shape());
  const std::size_t en = ev.numel();
  for (std::size_t i = 0; i < bv.numel(); ++i) {
    if (!(bv[i] > R(0))) {
      fail(ErrorKind::numeric, "pow: base must be positive, got " + std::to_string(bv[i]));
    }
    out[i] = std::pow(bv[i], ev[i % en]);
  }
  auto node = make_node<R>(Prim::pow, {base, exponent});
  node.value = std::move(out);
  return base.graph().push(std::move(node));
}

template <class R>
Var<R> exp(Var<R> a) {
  return unary(Prim::exp, a, [](R x) { return std::exp(x); });
}

template <class R>
Var<R> log(Var<R> a) {
  for (R x : a.value().data()) {
    if (!(x > R(0))) fail(ErrorKind::numeric, "log: input must be positive, got " + std::to_string(x));
  }
  return unary(Prim::log, a, [](R x) { return std::log(x); });
}

template <class R>
Var<R> sigmoid(Var<R> a) {
  return unary(Prim::sigmoid, a, [](R x) { return stable_sigmoid(x); });
}

template <class R>
Var<R> clamp(Var<R> a, double lo, double hi) {
  if (!(lo <= hi)) fail(ErrorKind::usage, "clamp: lo > hi");
  const R rlo = static_cast<R>(lo);
  const R rhi = static_cast<R>(hi);
  Graph<R>& g = a.graph();
  const BasicTensor<R>& av = a.value();
  BasicTensor<R> out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const R x = av[i];
    out[i] = std::min(std::max(x, rlo), rhi);
    if (g.tracks_branches()) g.fold_branch(x < rlo ? 0u : (x > rhi ? 2u : 1u));
  }
  auto node = make_node<R>(Prim::clamp, {a});
  node.value = std::move(out);
  node.a = static_cast<double>(rlo);
  node.b = static_cast<double>(rhi);
  return g.push(std::move(node));
}

template <class R>
Var<R> abs(Var<R> a) {
  Graph<R>& g = a.graph();
  if (g.tracks_branches()) {
    for (R x : a.value().data()) g.fold_branch(x > R(0) ? 1u : (x < R(0) ? 2u : 0u));
  }
  return unary(Prim::abs, a, [](R x) { return std::abs(x); });
}

template <class R>
Var<R> leaky_relu(Var<R> a, double slope) {
  Graph<R>& g = a.graph();
  if (g.tracks_branches()) {
    for (R x : a.value().data()) g.fold_branch(x > R(0) ? 1u : 0u);
  }
  const BasicTensor<R>& av = a.value();
  BasicTensor<R> out(av.shape());
  kernels::leaky_relu(av.raw(), out.raw(), av.numel(), static_cast<R>(slope));
  auto node = make_node<R>(Prim::leaky_relu, {a});
  node.value = std::move(out);
  node.a = slope;
  return g.push(std::move(node));
}

template <class R>
Var<R> sum(Var<R> a) {
  const BasicTensor<R>& av = a.value();
  auto node = make_node<R>(Prim::sum, {a});
  node.value = BasicTensor<R>::scalar(static_cast<R>(kernels::sum(av.raw(), av.numel())));
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> mean(Var<R> a) {
  const BasicTensor<R>& av = a.value();
  if (av.numel() == 0) shape_error(Prim::mean, a.graph().size(), "mean of empty tensor");
  auto node = make_node<R>(Prim::mean, {a});
  node.value = BasicTensor<R>::scalar(
      static_cast<R>(kernels::sum(av.raw(), av.numel()) / static_cast<double>(av.numel())));
  return a.graph().push(std::move(node));
}

namespace {

template <class R>
Var<R> reduce_axis(Prim op, Var<R> a, std::size_t axis) {
  const BasicTensor<R>& av = a.value();
  if (axis >= av.rank()) {
    shape_error(op, a.graph().size(), "axis " + std::to_string(axis) + " out of range for " +
                                          shape_string(av.shape()));
  }
  const Shape& s = av.shape();
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t len = s[axis];
  const std::size_t inner = av.numel() / std::max<std::size_t>(outer * len, 1);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  BasicTensor<R> out(out_shape);
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < len; ++l) {
      const R* row = av.raw() + (o * len + l) * inner;
      for (std::size_t i = 0; i < inner; ++i) acc[i] += row[i];
    }
    const double f = op == Prim::mean_axis ? 1.0 / static_cast<double>(len) : 1.0;
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = static_cast<R>(acc[i] * f);
  }
  auto node = make_node<R>(op, {a});
  node.value = std::move(out);
  node.axis = axis;
  return a.graph().push(std::move(node));
}

}  // namespace

template <class R>
Var<R> sum_axis(Var<R> a, std::size_t axis) { return reduce_axis(Prim::sum_axis, a, axis); }
template <class R>
Var<R> mean_axis(Var<R> a, std::size_t axis) { return reduce_axis(Prim::mean_axis, a, axis); }

template <class R>
Var<R> matmul(Var<R> a, Var<R> b) {
  same_graph(a, b);
  const BasicTensor<R>& av = a.value();
  const BasicTensor<R>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_error(Prim::matmul, a.graph().size(),
                "cannot multiply " + shape_string(av.shape()) + " by " + shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0);
  const std::size_t k = av.dim(1);
  const std::size_t n = bv.dim(1);
  BasicTensor<R> out(Shape{m, n});
  kernels::gemm(false, false, m, n, k, av.raw(), bv.raw(), out.raw(), false);
  auto node = make_node<R>(Prim::matmul, {a, b});
  node.value = std::move(out);
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> conv2d(Var<R> x, Var<R> weight, Var<R> bias) {
  same_graph(x, weight);
  same_graph(x, bias);
  Graph<R>& g = x.graph();
  const BasicTensor<R>& xv = x.value();
  const BasicTensor<R>& wv = weight.value();
  const BasicTensor<R>& bv = bias.value();
  require_rank(Prim::conv2d, x, 4, "input");
  require_rank(Prim::conv2d, weight, 4, "weight");
  const std::size_t batch = xv.dim(0);
  const std::size_t cin = xv.dim(1);
  const std::size_t h = xv.dim(2);
  const std::size_t w = xv.dim(3);
  const std::size_t cout = wv.dim(0);
  const std::size_t ks = wv.dim(2);
  if (wv.dim(1) != cin || wv.dim(3) != ks || ks % 2 == 0 || bv.numel() != cout) {
    shape_error(Prim::conv2d, g.size(),
                "weight " + shape_string(wv.shape()) + " / bias " + shape_string(bv.shape()) +
                    " incompatible with input " + shape_string(xv.shape()));
  }
  const std::size_t hw = h * w;
  const std::size_t ckk = cin * ks * ks;
  BasicTensor<R> out(Shape{batch, cout, h, w});
  std::vector<R> cols(ckk * hw);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::ref::im2col(xv.raw() + bi * cin * hw, cin, h, w, ks, cols.data());
    R* dst = out.raw() + bi * cout * hw;
    for (std::size_t c = 0; c < cout; ++c) std::fill(dst + c * hw, dst + (c + 1) * hw, bv[c]);
    kernels::gemm(false, false, cout, hw, ckk, wv.raw(), cols.data(), dst, true);
  }
  auto node = make_node<R>(Prim::conv2d, {x, weight, bias});
  node.value = std::move(out);
  return g.push(std::move(node));
}

template <class R>
Var<R> depthwise_conv(Var<R> x, Var<R> kernel) {
  same_graph(x, kernel);
  const BasicTensor<R>& xv = x.value();
  const BasicTensor<R>& kv = kernel.value();
  if (kv.rank() != 2 || kv.dim(0) != kv.dim(1) || kv.dim(0) % 2 == 0 || xv.rank() < 2) {
    shape_error(Prim::depthwise_conv, x.graph().size(),
                "kernel " + shape_string(kv.shape()) + " with input " + shape_string(xv.shape()));
  }
  const std::size_t r = xv.rank();
  const std::size_t h = xv.dim(r - 2);
  const std::size_t w = xv.dim(r - 1);
  const std::size_t ks = kv.dim(0);
  BasicTensor<R> out(xv.shape());
  kernels::depthwise_forward(xv.raw(), xv.numel() / (h * w), h, w, kv.raw(), ks, out.raw());
  auto node = make_node<R>(Prim::depthwise_conv, {x, kernel});
  node.value = std::move(out);
  return x.graph().push(std::move(node));
}

template <class R>
Var<R> mean_pool2(Var<R> x) {
  const BasicTensor<R>& xv = x.value();
  const std::size_t r = xv.rank();
  if (r < 2 || xv.dim(r - 2) % 2 != 0 || xv.dim(r - 1) % 2 != 0) {
    shape_error(Prim::mean_pool2, x.graph().size(), "needs even spatial size, got " + shape_string(xv.shape()));
  }
  const std::size_t h = xv.dim(r - 2);
  const std::size_t w = xv.dim(r - 1);
  Shape os = xv.shape();
  os[r - 2] = h / 2;
  os[r - 1] = w / 2;
  BasicTensor<R> out(os);
  const std::size_t planes = xv.numel() / (h * w);
  const std::size_t oh = h / 2;
  const std::size_t ow = w / 2;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const R* base = xv.raw() + p * h * w + (2 * y) * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = (base[0] + base[1] + base[w] + base[w + 1]) * R(0.25);
      }
    }
  }
  auto node = make_node<R>(Prim::mean_pool2, {x});
  node.value = std::move(out);
  return x.graph().push(std::move(node));
}

namespace {

template <class R>
Var<R> softmax_impl(Prim op, Var<R> a) {
  const BasicTensor<R>& av = a.value();
  if (av.rank() == 0 || av.numel() == 0) shape_error(op, a.graph().size(), "empty input");
  const std::size_t len = av.shape().back();
  const std::size_t rows = av.numel() / len;
  BasicTensor<R> out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const R* x = av.raw() + r * len;
    R* y = out.raw() + r * len;
    const R mx = *std::max_element(x, x + len);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) total += std::exp(static_cast<double>(x[i] - mx));
    if (op == Prim::softmax) {
      for (std::size_t i = 0; i < len; ++i) {
        y[i] = static_cast<R>(std::exp(static_cast<double>(x[i] - mx)) / total);
      }
    } else {
      const double lse = std::log(total);
      for (std::size_t i = 0; i < len; ++i) y[i] = static_cast<R>(static_cast<double>(x[i] - mx) - lse);
    }
  }
  auto node = make_node<R>(op, {a});
  node.value = std::move(out);
  return a.graph().push(std::move(node));
}

}  // namespace

template <class R>
Var<R> softmax(Var<R> a) { return softmax_impl(Prim::softmax, a); }
template <class R>
Var<R> log_softmax(Var<R> a) { return softmax_impl(Prim::log_softmax, a); }

template <class R>
Var<R> channel_mean(Var<R> x) {
  const BasicTensor<R>& xv = x.value();
  const std::size_t r = xv.rank();
  if (r != 3 && r != 4) {
    shape_error(Prim::channel_mean, x.graph().size(), "expects C x H x W or B x C x H x W, got " +
                                                          shape_string(xv.shape()));
  }
  const std::size_t c = xv.dim(r - 3);
  const std::size_t hw = xv.dim(r - 2) * xv.dim(r - 1);
  const std::size_t outer = xv.numel() / (c * hw);
  Shape os = xv.shape();
  os[r - 3] = 1;
  BasicTensor<R> out(os);
  for (std::size_t o = 0; o < outer; ++o) {
    R* dst = out.raw() + o * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      // 64-bit sum: the mean of equal channels is then exactly that value.
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += static_cast<double>(xv[(o * c + ch) * hw + i]);
      dst[i] = static_cast<R>(acc / static_cast<double>(c));
    }
  }
  auto node = make_node<R>(Prim::channel_mean, {x});
  node.value = std::move(out);
  return x.graph().push(std::move(node));
}

template <class R>
Var<R> repeat_channels(Var<R> x, std::size_t channels) {
  const BasicTensor<R>& xv = x.value();
  const std::size_t r = xv.rank();
  if ((r != 3 && r != 4) || xv.dim(r - 3) != 1 || channels == 0) {
    shape_error(Prim::repeat_channels, x.graph().size(), "expects a unit channel axis, got " +
                                                             shape_string(xv.shape()));
  }
  const std::size_t hw = xv.dim(r - 2) * xv.dim(r - 1);
  const std::size_t outer = xv.numel() / hw;
  Shape os = xv.shape();
  os[r - 3] = channels;
  BasicTensor<R> out(os);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      std::copy(xv.raw() + o * hw, xv.raw() + (o + 1) * hw, out.raw() + (o * channels + ch) * hw);
    }
  }
  auto node = make_node<R>(Prim::repeat_channels, {x});
  node.value = std::move(out);
  node.aux = {channels};
  return x.graph().push(std::move(node));
}

template <class R>
Var<R> gated_mixture(Var<R> x, std::span<const Var<R>> outs, Var<R> gates, Var<R> select) {
  Graph<R>& g = x.graph();
  same_graph(x, gates);
  same_graph(x, select);
  const BasicTensor<R>& xv = x.value();
  const BasicTensor<R>& gv = gates.value();
  const BasicTensor<R>& sv = select.value();
  const std::size_t ops = outs.size();
  if (xv.rank() < 1 || xv.dim(0) == 0) shape_error(Prim::gated_mixture, g.size(), "input needs a batch axis");
  const std::size_t rows = xv.dim(0);
  if (sv.shape() != Shape{ops} || gv.shape() != Shape{rows, ops}) {
    shape_error(Prim::gated_mixture, g.size(),
                "gates " + shape_string(gv.shape()) + " / select " + shape_string(sv.shape()) + " do not match " +
                    std::to_string(rows) + " rows and " + std::to_string(ops) + " branches");
  }
  for (const Var<R>& o : outs) {
    same_graph(x, o);
    if (o.shape() != xv.shape()) {
      shape_error(Prim::gated_mixture, g.size(), "branch " + shape_string(o.shape()) + " vs input " + shape_string(xv.shape()));
    }
  }
  const std::size_t inner = xv.numel() / rows;
  BasicTensor<R> out(xv.shape());
  NodeT<R> node;
  node.op = Prim::gated_mixture;
  node.inputs = {x.id(), gates.id(), select.id()};
  for (const Var<R>& o : outs) node.inputs.push_back(o.id());
  for (std::size_t b = 0; b < rows; ++b) {
    R* ob = out.raw() + b * inner;
    double cx = 0.0;
    for (std::size_t k = 0; k < ops; ++k) cx += static_cast<double>(sv[k]) * (1.0 - static_cast<double>(gv[b * ops + k]));
    kernels::scale(static_cast<R>(cx), xv.raw() + b * inner, ob, inner);
    for (std::size_t k = 0; k < ops; ++k) {
      const auto c = static_cast<R>(static_cast<double>(sv[k]) * gv[b * ops + k]);
      kernels::axpy(c, outs[k].value().raw() + b * inner, ob, inner);
    }
  }
  node.value = std::move(out);
  return g.push(std::move(node));
}

template <class R>
Var<R> concat(std::span<const Var<R>> parts) {
  if (parts.empty()) fail(ErrorKind::usage, "concat of zero tensors");
  Graph<R>& g = parts[0].graph();
  const Shape& first = parts[0].shape();
  Shape tail(first.begin() + 1, first.end());
  std::size_t rows = 0;
  for (const Var<R>& p : parts) {
    same_graph(parts[0], p);
    const Shape& s = p.shape();
    if (s.empty() || Shape(s.begin() + 1, s.end()) != tail) {
      shape_error(Prim::concat, g.size(), "part " + shape_string(s) + " does not match " + shape_string(first));
    }
    rows += s[0];
  }
  Shape os = first;
  os[0] = rows;
  BasicTensor<R> out(os);
  std::size_t offset = 0;
  NodeT<R> node;
  node.op = Prim::concat;
  for (const Var<R>& p : parts) {
    const BasicTensor<R>& v = p.value();
    std::copy(v.raw(), v.raw() + v.numel(), out.raw() + offset);
    offset += v.numel();
    node.inputs.push_back(p.id());
  }
  node.value = std::move(out);
  return g.push(std::move(node));
}

template <class R>
Var<R> slice(Var<R> a, std::size_t begin, std::size_t end) {
  const BasicTensor<R>& av = a.value();
  if (av.rank() == 0 || begin > end || end > av.dim(0)) {
    shape_error(Prim::slice, a.graph().size(), "rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                                                   ") of " + shape_string(av.shape()));
  }
  const std::size_t row = av.numel() / av.dim(0);
  Shape os = av.shape();
  os[0] = end - begin;
  std::vector<R> data(av.raw() + begin * row, av.raw() + end * row);
  auto node = make_node<R>(Prim::slice, {a});
  node.value = BasicTensor<R>(os, std::move(data));
  node.aux = {begin};
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> index(Var<R> a, std::size_t i) {
  const BasicTensor<R>& av = a.value();
  if (i >= av.numel()) {
    shape_error(Prim::index, a.graph().size(), "index " + std::to_string(i) + " out of " + shape_string(av.shape()));
  }
  auto node = make_node<R>(Prim::index, {a});
  node.value = BasicTensor<R>::scalar(av[i]);
  node.aux = {i};
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> reshape(Var<R> a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    shape_error(Prim::reshape, a.graph().size(), "cannot reshape " + shape_string(a.shape()) + " to " +
                                                     shape_string(shape));
  }
  auto node = make_node<R>(Prim::reshape, {a});
  node.value = a.value().reshaped(std::move(shape));
  return a.graph().push(std::move(node));
}

template <class R>
Var<R> sort_columns(Var<R> a) {
  const BasicTensor<R>& av = a.value();
  if (av.rank() != 2) shape_error(Prim::sort_columns, a.graph().size(), "expects rank 2, got " + shape_string(av.shape()));
  Graph<R>& g = a.graph();
  const std::size_t rows = av.dim(0);
  const std::size_t cols = av.dim(1);
  BasicTensor<R> out(av.shape());
  std::vector<std::size_t> perm(rows * cols);
  std::vector<std::size_t> order(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return av[i * cols + c] < av[j * cols + c]; });
    for (std::size_t r = 0; r < rows; ++r) {
      perm[r * cols + c] = order[r];
      out[r * cols + c] = av[order[r] * cols + c];
      if (g.tracks_branches()) g.fold_branch(order[r]);
    }
  }
  auto node = make_node<R>(Prim::sort_columns, {a});
  node.value = std::move(out);
  node.aux = std::move(perm);
  return g.push(std::move(node));
}

// ---------------------------------------------------------------------------
// Gradient checking

GradCheckResult grad_check(const GraphFunction& fn, std::span<const Tensor64> point, double epsilon,
                           const GradCheckOptions& options) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) fail(ErrorKind::usage, "grad_check: epsilon must be in (0, 1e-2]");

  auto run = [&](const std::vector<Tensor64>& at, Graph<double>& g) {
    std::vector<Var<double>> inputs;
    inputs.reserve(at.size());
    for (const Tensor64& t : at) inputs.push_back(g.param(t));
    Var<double> out = fn(g, inputs);
    if (out.numel() != 1) fail(ErrorKind::shape, "grad_check: function must return a scalar");
    return std::pair{inputs, out};
  };

  std::vector<Tensor64> base(point.begin(), point.end());
  Graph<double> g0(true);
  auto [inputs, out] = run(base, g0);
  const Gradients<double> grads = g0.gradients(out);
  const std::uint64_t sig0 = g0.branch_signature();
  const double f0 = out.value()[0];

  GradCheckResult result;
  Rng pick(options.seed);
  for (std::size_t t = 0; t < base.size(); ++t) {
    if (!options.wrt.empty() && (t >= options.wrt.size() || !options.wrt[t])) continue;
    const Tensor64 analytic = grads.wrt(inputs[t]);
    std::vector<std::size_t> coords(base[t].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords != 0 && coords.size() > options.max_coords) {
      pick.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_coords);
    }
    for (std::size_t i : coords) {
      std::vector<Tensor64> plus = base;
      std::vector<Tensor64> minus = base;
      plus[t][i] += epsilon;
      minus[t][i] -= epsilon;
      Graph<double> gp(true);
      Graph<double> gm(true);
      const double fp = run(plus, gp).second.value()[0];
      const double fm = run(minus, gm).second.value()[0];
      if (gp.branch_signature() != sig0 || gm.branch_signature() != sig0) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * epsilon);
      // Rounding in fp - fm limits what the quotient can resolve.
      const double scale = std::max({std::abs(f0), std::abs(fp), std::abs(fm)});
      const double floor = std::max(1e-8, kFiniteDifferenceNoise * std::numeric_limits<double>::epsilon() * scale / epsilon);
      if (std::abs(analytic[i]) < floor) ++result.noise_limited;
      const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + floor);
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

#define IRSTYLE_INSTANTIATE(R)                                              \
  template class Gradients<R>;                                              \
  template class Graph<R>;                                                  \
  template Var<R> add(Var<R>, Var<R>);                                      \
  template Var<R> sub(Var<R>, Var<R>);                                      \
  template Var<R> mul(Var<R>, Var<R>);                                      \
  template Var<R> div(Var<R>, Var<R>);                                      \
  template Var<R> scale_rows(Var<R>, Var<R>);                               \
  template Var<R> add_scalar(Var<R>, double);                               \
  template Var<R> mul_scalar(Var<R>, double);                               \
  template Var<R> pow(Var<R>, Var<R>);                                      \
  template Var<R> exp(Var<R>);                                              \
  template Var<R> log(Var<R>);                                              \
  template Var<R> sigmoid(Var<R>);                                          \
  template Var<R> clamp(Var<R>, double, double);                            \
  template Var<R> abs(Var<R>);                                              \
  template Var<R> leaky_relu(Var<R>, double);                               \
  template Var<R> sum(Var<R>);                                              \
  template Var<R> mean(Var<R>);                                             \
  template Var<R> sum_axis(Var<R>, std::size_t);                            \
  template Var<R> mean_axis(Var<R>, std::size_t);                           \
  template Var<R> matmul(Var<R>, Var<R>);                                   \
  template Var<R> conv2d(Var<R>, Var<R>, Var<R>);                           \
  template Var<R> depthwise_conv(Var<R>, Var<R>);                           \
  template Var<R> mean_pool2(Var<R>);                                       \
  template Var<R> softmax(Var<R>);                                          \
  template Var<R> log_softmax(Var<R>);                                      \
  template Var<R> channel_mean(Var<R>);                                     \
  template Var<R> repeat_channels(Var<R>, std::size_t);                     \
  template Var<R> concat(std::span<const Var<R>>);                          \
  template Var<R> gated_mixture(Var<R>, std::span<const Var<R>>, Var<R>, Var<R>); \
  template Var<R> slice(Var<R>, std::size_t, std::size_t);                  \
  template Var<R> index(Var<R>, std::size_t);                               \
  template Var<R> reshape(Var<R>, Shape);                                   \
  template Var<R> sort_columns(Var<R>);

IRSTYLE_INSTANTIATE(float)
IRSTYLE_INSTANTIATE(double)

#undef IRSTYLE_INSTANTIATE

}  // namespace irstyle
