#pragma once

#include <cstddef>
#include <string_view>
#include <type_traits>

#include "irstyle/kernels_ref.hpp"

namespace irstyle::kernels {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);

/// Float kernels selectable at runtime. Every entry has a scalar reference in
/// kernels_ref.hpp; vector variants must agree with it to rounding.
struct KernelTable {
  Isa isa;
  void (*add)(const float* a, const float* b, float* out, std::size_t n);
  void (*sub)(const float* a, const float* b, float* out, std::size_t n);
  void (*mul)(const float* a, const float* b, float* out, std::size_t n);
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  void (*scale)(float alpha, const float* x, float* out, std::size_t n);
  void (*mul_acc)(const float* a, const float* b, float* y, std::size_t n);
  void (*leaky_relu)(const float* x, float* out, std::size_t n, float slope);
  void (*leaky_relu_backward)(const float* x, const float* grad_out, float* grad_in,
                              std::size_t n, float slope);
  double (*sum)(const float* x, std::size_t n);
  void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               const float* a, const float* b, float* c, bool accumulate);
  void (*depthwise_forward)(const float* in, std::size_t planes, std::size_t height,
                            std::size_t width, const float* kernel, std::size_t ksize,
                            float* out);
};

const KernelTable& scalar_table();
/// Null when the build or the host lacks AVX2+FMA.
const KernelTable* avx2_table();

/// Best table for this host unless IRSTYLE_ISA=scalar is set, or select() was called.
const KernelTable& active();
Isa detect();
void select(Isa isa);

// Typed entry points used by the autodiff engine. float goes through the
// dispatch table; other types use the reference kernels.

template <class R>
void add(const R* a, const R* b, R* out, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) active().add(a, b, out, n);
  else ref::add(a, b, out, n);
}
template <class R>
void sub(const R* a, const R* b, R* out, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) active().sub(a, b, out, n);
  else ref::sub(a, b, out, n);
}
template <class R>
void mul(const R* a, const R* b, R* out, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) active().mul(a, b, out, n);
  else ref::mul(a, b, out, n);
}
template <class R>
void axpy(R alpha, const R* x, R* y, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) active().axpy(alpha, x, y, n);
  else ref::axpy(alpha, x, y, n);
}
template <class R>
void scale(R alpha, const R* x, R* out, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) active().scale(alpha, x, out, n);
  else ref::scale(alpha, x, out, n);
}
template <class R>
void mul_acc(const R* a, const R* b, R* y, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) active().mul_acc(a, b, y, n);
  else ref::mul_acc(a, b, y, n);
}
template <class R>
void leaky_relu(const R* x, R* out, std::size_t n, R slope) {
  if constexpr (std::is_same_v<R, float>) active().leaky_relu(x, out, n, slope);
  else ref::leaky_relu(x, out, n, slope);
}
template <class R>
void leaky_relu_backward(const R* x, const R* g, R* gi, std::size_t n, R slope) {
  if constexpr (std::is_same_v<R, float>) active().leaky_relu_backward(x, g, gi, n, slope);
  else ref::leaky_relu_backward(x, g, gi, n, slope);
}
template <class R>
double sum(const R* x, std::size_t n) {
  if constexpr (std::is_same_v<R, float>) return active().sum(x, n);
  else return ref::sum(x, n);
}
template <class R>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const R* a, const R* b,
          R* c, bool accumulate) {
  if constexpr (std::is_same_v<R, float>) active().gemm(ta, tb, m, n, k, a, b, c, accumulate);
  else ref::gemm(ta, tb, m, n, k, a, b, c, accumulate);
}
template <class R>
void depthwise_forward(const R* in, std::size_t planes, std::size_t h, std::size_t w,
                       const R* kernel, std::size_t ksize, R* out) {
  if constexpr (std::is_same_v<R, float>) active().depthwise_forward(in, planes, h, w, kernel, ksize, out);
  else ref::depthwise_forward(in, planes, h, w, kernel, ksize, out);
}

}  // namespace irstyle::kernels
