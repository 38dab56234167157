#include <doctest.h>

#include <cmath>
#include <vector>

#include "irstyle/kernels.hpp"
#include "irstyle/kernels_ref.hpp"
#include "irstyle/error.hpp"
#include "irstyle/rng.hpp"

using namespace irstyle;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(r.uniform(-1.0, 1.0));
  return v;
}

// Vector kernels may reassociate and fuse; compare to a tolerance scaled by
// the reduction length.
void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(static_cast<double>(a[i]) - b[i]) > tol * (1.0 + std::abs(static_cast<double>(b[i])))) {
      FAIL_CHECK("mismatch at " << i << ": " << a[i] << " vs " << b[i]);
      return;
    }
  }
}

const kernels::KernelTable* simd() { return kernels::avx2_table(); }

}  // namespace

TEST_CASE("scalar table matches the reference templates") {
  const auto& t = kernels::scalar_table();
  CHECK(t.isa == kernels::Isa::scalar);
  const auto a = random_vec(37, 1);
  const auto b = random_vec(37, 2);
  std::vector<float> out(37), ref(37);
  t.add(a.data(), b.data(), out.data(), 37);
  kernels::ref::add(a.data(), b.data(), ref.data(), 37);
  CHECK(out == ref);
}

TEST_CASE("SIMD elementwise kernels agree with scalar") {
  if (!simd()) {
    MESSAGE("AVX2 not available; skipping");
    return;
  }
  const auto& s = kernels::scalar_table();
  const auto& v = *simd();
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 31u, 64u, 1000u}) {
    CAPTURE(n);
    const auto a = random_vec(n, 10 + n);
    const auto b = random_vec(n, 20 + n);
    std::vector<float> o1(n), o2(n);
    s.add(a.data(), b.data(), o1.data(), n);
    v.add(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    s.sub(a.data(), b.data(), o1.data(), n);
    v.sub(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    s.mul(a.data(), b.data(), o1.data(), n);
    v.mul(a.data(), b.data(), o2.data(), n);
    CHECK(o1 == o2);
    s.scale(0.37f, a.data(), o1.data(), n);
    v.scale(0.37f, a.data(), o2.data(), n);
    CHECK(o1 == o2);
    std::vector<float> y1 = b, y2 = b;
    s.axpy(-1.25f, a.data(), y1.data(), n);
    v.axpy(-1.25f, a.data(), y2.data(), n);
    check_close(y2, y1, 1e-6);
    y1 = b;
    y2 = b;
    s.mul_acc(a.data(), b.data(), y1.data(), n);
    v.mul_acc(a.data(), b.data(), y2.data(), n);
    check_close(y2, y1, 1e-6);
    s.leaky_relu(a.data(), o1.data(), n, 0.2f);
    v.leaky_relu(a.data(), o2.data(), n, 0.2f);
    CHECK(o1 == o2);
    y1 = b;
    y2 = b;
    s.leaky_relu_backward(a.data(), b.data(), y1.data(), n, 0.2f);
    v.leaky_relu_backward(a.data(), b.data(), y2.data(), n, 0.2f);
    check_close(y2, y1, 1e-6);
    CHECK(std::abs(s.sum(a.data(), n) - v.sum(a.data(), n)) < 1e-9 * (1.0 + static_cast<double>(n)));
  }
}

TEST_CASE("SIMD gemm agrees with scalar for every transpose combination") {
  if (!simd()) return;
  const auto& s = kernels::scalar_table();
  const auto& v = *simd();
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 8}, {16, 1024, 27}, {13, 17, 33}, {64, 64, 288}, {5, 9, 1}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], n = sh[1], k = sh[2];
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        for (int acc = 0; acc < 2; ++acc) {
          CAPTURE(m);
          CAPTURE(n);
          CAPTURE(k);
          CAPTURE(ta);
          CAPTURE(tb);
          const auto a = random_vec(m * k, 100 + m);
          const auto b = random_vec(k * n, 200 + n);
          std::vector<float> c1 = random_vec(m * n, 300), c2 = c1;
          s.gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
          v.gemm(ta, tb, m, n, k, a.data(), b.data(), c2.data(), acc);
          check_close(c2, c1, 1e-5 * std::sqrt(static_cast<double>(k)));
        }
      }
    }
  }
}

TEST_CASE("gemm reference against a hand-computed product") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  const float a[] = {1, 2, 3, 4};
  const float b[] = {5, 6, 7, 8};
  float c[4] = {};
  kernels::ref::gemm(false, false, 2, 2, 2, a, b, c, false);
  CHECK(c[0] == 19);
  CHECK(c[1] == 22);
  CHECK(c[2] == 43);
  CHECK(c[3] == 50);
  // A^T with A stored as [1 3; 2 4] gives the same product.
  const float at[] = {1, 3, 2, 4};
  float d[4] = {};
  kernels::ref::gemm(true, false, 2, 2, 2, at, b, d, false);
  CHECK(std::equal(c, c + 4, d));
}

TEST_CASE("SIMD depthwise convolution agrees with scalar") {
  if (!simd()) return;
  for (std::size_t hw : {3u, 5u, 8u, 17u, 32u}) {
    for (std::size_t ks : {1u, 3u, 5u}) {
      if (ks / 2 >= hw) continue;
      CAPTURE(hw);
      CAPTURE(ks);
      const auto in = random_vec(4 * hw * hw, hw);
      const auto k = random_vec(ks * ks, ks);
      std::vector<float> o1(in.size()), o2(in.size());
      kernels::scalar_table().depthwise_forward(in.data(), 4, hw, hw, k.data(), ks, o1.data());
      simd()->depthwise_forward(in.data(), 4, hw, hw, k.data(), ks, o2.data());
      check_close(o2, o1, 1e-6);
    }
  }
}

TEST_CASE("reflect-101 padding") {
  CHECK(kernels::ref::reflect(-1, 5) == 1);
  CHECK(kernels::ref::reflect(-2, 5) == 2);
  CHECK(kernels::ref::reflect(5, 5) == 3);
  CHECK(kernels::ref::reflect(6, 5) == 2);
  CHECK(kernels::ref::reflect(2, 5) == 2);
  // Offsets beyond one reflection keep mirroring; tiny sizes stay in range.
  CHECK(kernels::ref::reflect(-2, 2) == 0);
  CHECK(kernels::ref::reflect(3, 2) == 1);
  CHECK(kernels::ref::reflect(-2, 1) == 0);
  CHECK(kernels::ref::reflect(2, 1) == 0);
  CHECK(kernels::ref::reflect(-5, 3) == 1);
  CHECK(kernels::ref::reflect(9, 4) == 3);
}

TEST_CASE("dispatch selection") {
  const kernels::Isa before = kernels::active().isa;
  kernels::select(kernels::Isa::scalar);
  CHECK(kernels::active().isa == kernels::Isa::scalar);
  if (simd()) {
    kernels::select(kernels::Isa::avx2);
    CHECK(kernels::active().isa == kernels::Isa::avx2);
  } else {
    CHECK_THROWS_AS(kernels::select(kernels::Isa::avx2), Error);
  }
  kernels::select(before);
}
