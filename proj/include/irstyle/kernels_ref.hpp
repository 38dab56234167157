#pragma once

// Scalar reference kernels. These define the semantics every vector variant
// is tested against, and they are the only path for 64-bit tensors.

#include <cstddef>

#include "irstyle/error.hpp"

namespace irstyle::kernels::ref {

/// Reflect-101 index for padding: -1 -> 1, n -> n-2, mirrored periodically
/// so any offset is valid; n = 1 maps everything to 0.
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (i >= 0 && i < sn) return static_cast<std::size_t>(i);
  if (sn == 1) return 0;
  const std::ptrdiff_t period = 2 * sn - 2;
  i = (i < 0 ? -i : i) % period;
  if (i >= sn) i = period - i;
  return static_cast<std::size_t>(i);
}

template <class R>
void add(const R* a, const R* b, R* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
template <class R>
void sub(const R* a, const R* b, R* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
template <class R>
void mul(const R* a, const R* b, R* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
template <class R>
void axpy(R alpha, const R* x, R* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
template <class R>
void scale(R alpha, const R* x, R* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}
template <class R>
void mul_acc(const R* a, const R* b, R* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}
template <class R>
void leaky_relu(const R* x, R* out, std::size_t n, R slope) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > R(0) ? x[i] : slope * x[i];
}
template <class R>
void leaky_relu_backward(const R* x, const R* g, R* gi, std::size_t n, R slope) {
  for (std::size_t i = 0; i < n; ++i) gi[i] += x[i] > R(0) ? g[i] : slope * g[i];
}
template <class R>
double sum(const R* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
  return acc;
}
template <class R>
double dot(const R* a, const R* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

/// C (m x n) = op(A) (m x k) * op(B) (k x n), row-major; op transposes when
/// the flag is set (A stored k x m, B stored n x k).
template <class R>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const R* a, const R* b,
          R* c, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = R(0);
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const R av = ta ? a[p * m + i] : a[i * k + p];
      R* crow = c + i * n;
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const R* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

/// Same square kernel applied to every plane, stride 1, reflect padding.
template <class R>
void depthwise_forward(const R* in, std::size_t planes, std::size_t h, std::size_t w,
                       const R* kernel, std::size_t ksize, R* out) {
  const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
  for (std::size_t c = 0; c < planes; ++c) {
    const R* src = in + c * h * w;
    R* dst = out + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        R acc = R(0);
        for (std::size_t i = 0; i < ksize; ++i) {
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + i) - pad, h);
          for (std::size_t j = 0; j < ksize; ++j) {
            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x + j) - pad, w);
            acc += kernel[i * ksize + j] * src[sy * w + sx];
          }
        }
        dst[y * w + x] = acc;
      }
    }
  }
}

/// Gradients of depthwise_forward. grad_in and grad_kernel are accumulated.
template <class R>
void depthwise_backward(const R* in, std::size_t planes, std::size_t h, std::size_t w,
                        const R* kernel, std::size_t ksize, const R* grad_out, R* grad_in,
                        R* grad_kernel) {
  const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
  for (std::size_t c = 0; c < planes; ++c) {
    const R* src = in + c * h * w;
    const R* g = grad_out + c * h * w;
    R* gsrc = grad_in ? grad_in + c * h * w : nullptr;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const R go = g[y * w + x];
        for (std::size_t i = 0; i < ksize; ++i) {
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + i) - pad, h);
          for (std::size_t j = 0; j < ksize; ++j) {
            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x + j) - pad, w);
            if (gsrc) gsrc[sy * w + sx] += kernel[i * ksize + j] * go;
            if (grad_kernel) grad_kernel[i * ksize + j] += src[sy * w + sx] * go;
          }
        }
      }
    }
  }
}

/// Unfolds one image (channels x h x w) into (channels*k*k) x (h*w) columns
/// with reflect padding.
template <class R>
void im2col(const R* in, std::size_t channels, std::size_t h, std::size_t w, std::size_t ksize,
            R* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const R* src = in + c * h * w;
    for (std::size_t i = 0; i < ksize; ++i) {
      for (std::size_t j = 0; j < ksize; ++j, ++row) {
        R* dst = cols + row * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + i) - pad, h);
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x + j) - pad, w);
            dst[y * w + x] = src[sy * w + sx];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back into the image.
template <class R>
void col2im(const R* cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t ksize,
            R* grad_in) {
  const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    R* dst = grad_in + c * h * w;
    for (std::size_t i = 0; i < ksize; ++i) {
      for (std::size_t j = 0; j < ksize; ++j, ++row) {
        const R* src = cols + row * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y + i) - pad, h);
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(x + j) - pad, w);
            dst[sy * w + sx] += src[y * w + x];
          }
        }
      }
    }
  }
}

}  // namespace irstyle::kernels::ref
