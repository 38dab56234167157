#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irstyle/error.hpp"
#include "irstyle/rng.hpp"

using namespace irstyle;

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng d(42);
  CHECK(d.next_u64() != c.next_u64());
}

TEST_CASE("uniform ranges") {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double o = r.uniform_open();
    CHECK((o > 0.0 && o < 1.0));
    const double s = r.uniform(-0.01, 0.01);
    CHECK((s >= -0.01 && s < 0.01));
    CHECK(r.below(7) < 7);
  }
}

TEST_CASE("moments of the transforms") {
  Rng r(5);
  const int n = 200000;
  double sn = 0, sn2 = 0, sl = 0, sl2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
    const double l = r.logistic();
    sl += l;
    sl2 += l * l;
  }
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(std::abs(sn2 / n - 1.0) < 0.02);
  // Logistic(0, 1): variance pi^2 / 3.
  CHECK(std::abs(sl / n) < 0.02);
  CHECK(std::abs(sl2 / n - M_PI * M_PI / 3.0) < 0.05);
}

TEST_CASE("below is unbiased on a small range") {
  Rng r(9);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) counts[r.below(3)]++;
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("shuffle is a permutation and deterministic") {
  std::vector<int> a(50);
  std::iota(a.begin(), a.end(), 0);
  std::vector<int> b(a);
  Rng r1(3), r2(3);
  r1.shuffle(std::span<int>(a));
  r2.shuffle(std::span<int>(b));
  CHECK(a == b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("state save and restore") {
  Rng r(11);
  r.normal();
  const std::string state = r.save_state();
  const double next = r.uniform();
  Rng q;
  q.load_state(state);
  CHECK(q.uniform() == next);
  CHECK_THROWS_AS(q.load_state("garbage"), Error);
}

TEST_CASE("derived seeds differ by key") {
  CHECK(derive_seed(7, "a") != derive_seed(7, "b"));
  CHECK(derive_seed(7, "a") == derive_seed(7, "a"));
  CHECK(derive_seed(7, std::uint64_t{0}) != derive_seed(7, std::uint64_t{1}));
}
