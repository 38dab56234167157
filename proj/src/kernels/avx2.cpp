// AVX2 + FMA float kernels. This translation unit is built with -mavx2 -mfma
// and is only entered after a runtime CPU check.

#include <immintrin.h>

#include "irstyle/kernels.hpp"

namespace irstyle::kernels {
namespace avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale(float alpha, const float* x, float* out, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void mul_acc(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i),
                                            _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

void leaky_relu(const float* x, float* out, std::size_t n, float slope) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 pos = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(_mm256_mul_ps(vs, v), v, pos));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward(const float* x, const float* g, float* gi, std::size_t n, float slope) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 vg = _mm256_loadu_ps(g + i);
    const __m256 d = _mm256_blendv_ps(_mm256_mul_ps(vs, vg), vg, pos);
    _mm256_storeu_ps(gi + i, _mm256_add_ps(_mm256_loadu_ps(gi + i), d));
  }
  for (; i < n; ++i) gi[i] += x[i] > 0.0f ? g[i] : slope * g[i];
}

double sum(const float* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) total += static_cast<double>(x[i]);
  return total;
}

// c_row[0..n) += av * b_row[0..n)
inline void row_axpy(float av, const float* brow, float* crow, std::size_t n) {
  const __m256 va = _mm256_set1_ps(av);
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32) {
    _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
    _mm256_storeu_ps(crow + j + 8, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j + 8), _mm256_loadu_ps(crow + j + 8)));
    _mm256_storeu_ps(crow + j + 16, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j + 16), _mm256_loadu_ps(crow + j + 16)));
    _mm256_storeu_ps(crow + j + 24, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j + 24), _mm256_loadu_ps(crow + j + 24)));
  }
  for (; j + 8 <= n; j += 8) {
    _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
  }
  for (; j < n; ++j) crow[j] += av * brow[j];
}

// Four rows of A against one row of B at a time so each B load is reused.
inline void rows4_axpy(const float av[4], const float* brow, float* c0, float* c1, float* c2,
                       float* c3, std::size_t n) {
  const __m256 a0 = _mm256_set1_ps(av[0]);
  const __m256 a1 = _mm256_set1_ps(av[1]);
  const __m256 a2 = _mm256_set1_ps(av[2]);
  const __m256 a3 = _mm256_set1_ps(av[3]);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    const __m256 vb = _mm256_loadu_ps(brow + j);
    _mm256_storeu_ps(c0 + j, _mm256_fmadd_ps(a0, vb, _mm256_loadu_ps(c0 + j)));
    _mm256_storeu_ps(c1 + j, _mm256_fmadd_ps(a1, vb, _mm256_loadu_ps(c1 + j)));
    _mm256_storeu_ps(c2 + j, _mm256_fmadd_ps(a2, vb, _mm256_loadu_ps(c2 + j)));
    _mm256_storeu_ps(c3 + j, _mm256_fmadd_ps(a3, vb, _mm256_loadu_ps(c3 + j)));
  }
  for (; j < n; ++j) {
    c0[j] += av[0] * brow[j];
    c1[j] += av[1] * brow[j];
    c2[j] += av[2] * brow[j];
    c3[j] += av[3] * brow[j];
  }
}

inline float dot(const float* a, const float* b, std::size_t k) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t p = 0;
  for (; p + 16 <= k; p += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p + 8), _mm256_loadu_ps(b + p + 8), acc1);
  }
  for (; p + 8 <= k; p += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + p), _mm256_loadu_ps(b + p), acc0);
  }
  float total = hsum(_mm256_add_ps(acc0, acc1));
  for (; p < k; ++p) total += a[p] * b[p];
  return total;
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float* c, bool accumulate) {
  if (ta && tb) {
    ref::gemm(ta, tb, m, n, k, a, b, c, accumulate);
    return;
  }
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
  }
  if (tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const float* arow = a + i * k;
      float* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += dot(arow, b + j * k, k);
    }
    return;
  }
  auto a_at = [&](std::size_t i, std::size_t p) { return ta ? a[p * m + i] : a[i * k + p]; };
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    float* c0 = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av[4] = {a_at(i, p), a_at(i + 1, p), a_at(i + 2, p), a_at(i + 3, p)};
      rows4_axpy(av, b + p * n, c0, c0 + n, c0 + 2 * n, c0 + 3 * n, n);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) row_axpy(a_at(i, p), b + p * n, c + i * n, n);
  }
}

void depthwise_forward(const float* in, std::size_t planes, std::size_t h, std::size_t w,
                       const float* kernel, std::size_t ksize, float* out) {
  const std::size_t pad = ksize / 2;
  if (w < 2 * pad + 8) {
    ref::depthwise_forward(in, planes, h, w, kernel, ksize, out);
    return;
  }
  const auto spad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < planes; ++c) {
    const float* src = in + c * h * w;
    float* dst = out + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      auto scalar_at = [&](std::size_t x) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < ksize; ++i) {
          const std::size_t sy = ref::reflect(static_cast<std::ptrdiff_t>(y + i) - spad, h);
          for (std::size_t j = 0; j < ksize; ++j) {
            const std::size_t sx = ref::reflect(static_cast<std::ptrdiff_t>(x + j) - spad, w);
            acc += kernel[i * ksize + j] * src[sy * w + sx];
          }
        }
        return acc;
      };
      for (std::size_t x = 0; x < pad; ++x) dst[y * w + x] = scalar_at(x);
      std::size_t x = pad;
      for (; x + 8 <= w - pad; x += 8) {
        __m256 acc = _mm256_setzero_ps();
        for (std::size_t i = 0; i < ksize; ++i) {
          const std::size_t sy = ref::reflect(static_cast<std::ptrdiff_t>(y + i) - spad, h);
          const float* srow = src + sy * w + x - pad;
          for (std::size_t j = 0; j < ksize; ++j) {
            acc = _mm256_fmadd_ps(_mm256_set1_ps(kernel[i * ksize + j]), _mm256_loadu_ps(srow + j), acc);
          }
        }
        _mm256_storeu_ps(dst + y * w + x, acc);
      }
      for (; x < w; ++x) dst[y * w + x] = scalar_at(x);
    }
  }
}

constexpr KernelTable kAvx2{
    Isa::avx2, add, sub, mul, axpy, scale, mul_acc, leaky_relu, leaky_relu_backward,
    sum,       gemm, depthwise_forward,
};

}  // namespace
}  // namespace avx2

const KernelTable* avx2_kernel_table() { return &avx2::kAvx2; }

}  // namespace irstyle::kernels
