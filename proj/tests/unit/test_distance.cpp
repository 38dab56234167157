#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "irstyle/distance.hpp"
#include "irstyle/optim.hpp"

using namespace irstyle;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(s));
  Rng r(seed);
  for (float& v : t.data()) v = static_cast<float>(r.uniform(lo, hi));
  return t;
}

Tensor64 to64(const Tensor& t) {
  Tensor64 o(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) o[i] = t[i];
  return o;
}

double sw(const Tensor& a, const Tensor& b, const Tensor& proj) {
  Graph<double> g;
  return sliced_wasserstein<double>(g.constant(to64(a)), g.constant(to64(b)), proj).value()[0];
}

// Direct oracle: per projection, sort both projected sets and average the
// absolute differences.
double sw_oracle(const Tensor& a, const Tensor& b, const Tensor& proj) {
  const std::size_t batch = a.dim(0), dim = a.numel() / batch, count = proj.dim(1);
  double total = 0.0;
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> pa(batch), pb(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t d = 0; d < dim; ++d) {
        pa[i] += static_cast<double>(a[i * dim + d]) * proj[d * count + c];
        pb[i] += static_cast<double>(b[i * dim + d]) * proj[d * count + c];
      }
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    for (std::size_t i = 0; i < batch; ++i) total += std::abs(pa[i] - pb[i]);
  }
  return total / static_cast<double>(batch * count);
}

Tensor filled(Shape s, float v) {
  Tensor t(std::move(s));
  std::ranges::fill(t.data(), v);
  return t;
}

std::vector<Tensor*> ptrs(std::vector<Tensor>& v) {
  std::vector<Tensor*> out;
  for (Tensor& t : v) out.push_back(&t);
  return out;
}

// Head whose logits are just the final bias: every conv/fc weight zero.
TaskHead bias_only_head(std::vector<float> logits) {
  TaskHead h = make_task_head(logits.size(), 1);
  h.fill(0.0f);
  Tensor& bias = h.params().back();
  for (std::size_t i = 0; i < logits.size(); ++i) bias[i] = logits[i];
  return h;
}

}  // namespace

TEST_CASE("projections are unit columns and seeded") {
  Rng a(3), b(3);
  const Tensor p = draw_projections(20, 7, a);
  REQUIRE(p.shape() == Shape{20, 7});
  for (std::size_t c = 0; c < 7; ++c) {
    double n = 0.0;
    for (std::size_t d = 0; d < 20; ++d) n += static_cast<double>(p[d * 7 + c]) * p[d * 7 + c];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(draw_projections(20, 7, b) == p);
  CHECK_THROWS_AS(draw_projections(0, 3, a), Error);
}

TEST_CASE("sliced Wasserstein examples") {
  Rng rng(1);
  const Tensor a = rand_tensor(Shape{6, 3, 4, 4}, 10);
  const Tensor proj = draw_projections(48, 16, rng);
  CHECK(std::abs(sw(a, a, proj)) <= 1e-6);

  // 1-D: {0, 1} vs {1, 2} under the single unit direction.
  const Tensor x(Shape{2, 1}, {0.0f, 1.0f});
  const Tensor y(Shape{2, 1}, {1.0f, 2.0f});
  const Tensor one(Shape{1, 1}, {1.0f});
  CHECK(std::abs(sw(x, y, one) - 1.0) <= 1e-6);
  Graph<float> g;
  CHECK(std::abs(sliced_wasserstein<float>(g.constant(x), g.constant(y), one).value()[0] - 1.0f) <= 1e-6f);

  const Tensor b = rand_tensor(Shape{6, 3, 4, 4}, 11);
  CHECK(sw(a, b, proj) == sw(b, a, proj));
}

TEST_CASE("sliced Wasserstein against the sorting oracle") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor a = rand_tensor(Shape{5, 3, 2, 2}, 100 + seed);
    const Tensor b = rand_tensor(Shape{5, 3, 2, 2}, 200 + seed);
    const Tensor proj = draw_projections(12, 9, rng);
    CHECK(sw(a, b, proj) == doctest::Approx(sw_oracle(a, b, proj)).epsilon(1e-6));
  }
}

TEST_CASE("property: sliced Wasserstein is non-negative, symmetric and zero on equal multisets") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    const Tensor a = rand_tensor(Shape{7, 3, 2, 2}, 300 + seed);
    const Tensor b = rand_tensor(Shape{7, 3, 2, 2}, 400 + seed);
    const Tensor proj = draw_projections(12, 5, rng);
    CHECK(sw(a, b, proj) >= 0.0);
    CHECK(sw(a, b, proj) == sw(b, a, proj));

    // Same multiset, rows permuted.
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 6; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Tensor shuffled(a.shape());
    for (std::size_t i = 0; i < 7; ++i) {
      std::copy_n(a.raw() + perm[i] * 12, 12, shuffled.raw() + i * 12);
    }
    CHECK(std::abs(sw(a, shuffled, proj)) <= 1e-6);
  }
}

TEST_CASE("sliced Wasserstein errors") {
  Graph<float> g;
  Rng rng(1);
  const Tensor proj = draw_projections(12, 3, rng);
  CHECK_THROWS_AS(sliced_wasserstein<float>(g.constant(Tensor(Shape{2, 3, 2, 2})), g.constant(Tensor(Shape{3, 3, 2, 2})), proj),
                  Error);
  CHECK_THROWS_AS(sliced_wasserstein<float>(g.constant(Tensor(Shape{2, 3, 2, 2})), g.constant(Tensor(Shape{2, 3, 1, 4})), proj),
                  Error);
  CHECK_THROWS_AS(sliced_wasserstein<float>(g.constant(Tensor(Shape{2, 3, 2, 1})), g.constant(Tensor(Shape{2, 3, 2, 1})), proj),
                  Error);
  DomainBatch a{Tensor(Shape{2, 3, 32, 32}), {}}, b{Tensor(Shape{3, 3, 32, 32}), {}};
  CHECK_THROWS_AS(sliced_wasserstein(a, b, 4, rng), Error);
}

TEST_CASE("sliced Wasserstein gradient w.r.t. fake pixels") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Tensor proj = draw_projections(48, 8, rng);
    const std::vector<Tensor64> point = {to64(rand_tensor(Shape{4, 3, 4, 4}, 500 + seed)),
                                         to64(rand_tensor(Shape{4, 3, 4, 4}, 600 + seed))};
    const GraphFunction fn = [&proj](Graph<double>&, std::span<const Var<double>> v) {
      return sliced_wasserstein<double>(v[0], v[1], proj);
    };
    GradCheckOptions opt;
    opt.wrt = {false, true};
    worst = std::max(worst, grad_check(fn, point, 1e-5, opt).max_rel_error);
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("pool_to") {
  Graph<float> g;
  Tensor x = rand_tensor(Shape{2, 3, 8, 8}, 1);
  const Tensor p = pool_to<float>(g.constant(x), 2).value();
  REQUIRE(p.shape() == Shape{2, 3, 2, 2});
  double block = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) block += x[i * 8 + j];
  CHECK(p[0] == doctest::Approx(block / 16.0).epsilon(1e-6));
  CHECK(pool_to<float>(g.constant(x), 8).value() == x);
  CHECK(pool_to<float>(g.constant(x), 16).value() == x);
  CHECK_THROWS_AS(pool_to<float>(g.constant(Tensor(Shape{1, 3, 12, 12})), 8), Error);
  CHECK_THROWS_AS(pool_to<float>(g.constant(Tensor(Shape{1, 3, 8, 4})), 2), Error);
}

TEST_CASE("critic distance examples") {
  const Tensor real = rand_tensor(Shape{3, 3, 8, 8}, 2);
  const Tensor fake = rand_tensor(Shape{3, 3, 8, 8}, 3);

  CriticNet zero = make_critic(1);
  zero.fill(0.0f);
  {
    Graph<float> g;
    const auto p = zero.bind(g, false);
    const auto l = critic_distance<float>(zero, p, g.constant(real), g.constant(fake));
    CHECK(l.critic.value()[0] == 0.0f);
    CHECK(l.policy.value()[0] == 0.0f);
  }
  const CriticNet c = make_critic(5);
  Graph<float> g;
  const auto p = c.bind(g, false);
  const auto same = critic_distance<float>(c, p, g.constant(real), g.constant(real));
  CHECK(same.critic.value()[0] == 0.0f);

  // Against the network run directly.
  const auto l = critic_distance<float>(c, p, g.constant(real), g.constant(fake));
  const Tensor sr = c.forward<float>(p, g.constant(real)).value();
  const Tensor sf = c.forward<float>(p, g.constant(fake)).value();
  const double mr = (static_cast<double>(sr[0]) + sr[1] + sr[2]) / 3.0;
  const double mf = (static_cast<double>(sf[0]) + sf[1] + sf[2]) / 3.0;
  CHECK(l.critic.value()[0] == doctest::Approx(mf - mr).epsilon(1e-5));
  CHECK(l.policy.value()[0] == doctest::Approx(-mf).epsilon(1e-5));
}

TEST_CASE("critic separates constant batches and stays clipped") {
  // The critic loop as the trainer runs it: Adam at lr 1e-4, clip 0.01.
  const Tensor real = filled(Shape{4, 3, 32, 32}, 0.8f);
  const Tensor fake = filled(Shape{4, 3, 32, 32}, 0.2f);
  CriticNet c = make_critic(1);
  c.clip(kCriticClip);
  AdamState st = AdamState::zeros_like(c.params());
  double last = 0.0;
  bool clipped = true;
  for (int i = 0; i < 200; ++i) {
    Graph<float> g;
    const auto p = c.bind(g, true);
    const auto l = critic_distance<float>(c, p, g.constant(real), g.constant(fake));
    last = l.critic.value()[0];
    const Gradients<float> grads = g.gradients(l.critic);
    std::vector<Tensor> gl;
    for (const auto& v : p) gl.push_back(grads.wrt(v));
    adam_step(ptrs(c.params()), gl, st, 1e-4);
    c.clip(kCriticClip);
    for (const Tensor& t : c.params()) {
      for (float v : t.data()) clipped = clipped && std::abs(v) <= static_cast<float>(kCriticClip);
    }
  }
  CHECK(clipped);
  CHECK(last < -0.01);
}

TEST_CASE("critic and task head gradients") {
  const CriticNet critic = make_critic(3);
  const TaskHead head = make_task_head(3, 4);
  double worst_critic = 0.0, worst_head = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<Tensor64> point = {to64(rand_tensor(Shape{2, 3, 8, 8}, 700 + seed))};
    for (const Tensor& t : critic.params()) point.push_back(to64(t));
    const GraphFunction fn = [&critic](Graph<double>&, std::span<const Var<double>> v) {
      return sum(critic.forward<double>(v.subspan(1), v[0]));
    };
    GradCheckOptions opt;
    opt.max_coords = 12;
    opt.seed = seed;
    worst_critic = std::max(worst_critic, grad_check(fn, point, 1e-5, opt).max_rel_error);

    std::vector<Tensor64> hp = {to64(rand_tensor(Shape{2, 3, 8, 8}, 800 + seed))};
    for (const Tensor& t : head.params()) hp.push_back(to64(t));
    const std::vector<int> labels = {0, 2};
    const GraphFunction hf = [&head, &labels](Graph<double>&, std::span<const Var<double>> v) {
      return task_loss<double>(head, v.subspan(1), v[0], labels, Var<double>(), {});
    };
    worst_head = std::max(worst_head, grad_check(hf, hp, 1e-5, opt).max_rel_error);
  }
  CHECK(worst_critic <= 1e-3);
  CHECK(worst_head <= 1e-3);
}

TEST_CASE("task loss examples") {
  const Tensor real = rand_tensor(Shape{3, 3, 8, 8}, 4);
  const Tensor fake = rand_tensor(Shape{2, 3, 8, 8}, 5);
  const std::vector<int> rl = {0, 3, 1}, fl = {2, 2};

  const TaskHead uniform = bias_only_head({0, 0, 0, 0});
  {
    Graph<double> g;
    const auto p = uniform.bind(g, false);
    const double l = task_loss<double>(uniform, p, g.constant(to64(real)), rl, g.constant(to64(fake)), fl).value()[0];
    CHECK(std::abs(l - std::log(4.0)) <= 1e-9);
  }
  const TaskHead confident = bias_only_head({0, 0, 40, 0});
  {
    Graph<double> g;
    const auto p = confident.bind(g, false);
    const std::vector<int> twos = {2, 2, 2};
    const double l = task_loss<double>(confident, p, g.constant(to64(real)), twos, g.constant(to64(fake)), fl).value()[0];
    CHECK(l <= 1e-6);
  }
  // Empty stylized batch: cross-entropy of the real batch alone.
  const TaskHead head = make_task_head(4, 9);
  Graph<double> g;
  const auto p = head.bind(g, false);
  const Tensor64 logits = head.forward<double>(p, g.constant(to64(real))).value();
  double ce = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits[i * 4 + c]);
    ce += std::log(z) - logits[i * 4 + static_cast<std::size_t>(rl[i])];
  }
  const double alone = task_loss<double>(head, p, g.constant(to64(real)), rl, Var<double>(), {}).value()[0];
  CHECK(alone == doctest::Approx(ce / 3.0).epsilon(1e-12));
  const double empty =
      task_loss<double>(head, p, g.constant(to64(real)), rl, g.constant(Tensor64(Shape{0, 3, 8, 8})), {}).value()[0];
  CHECK(empty == doctest::Approx(ce / 3.0).epsilon(1e-12));

  // Value-level API needs labels.
  CHECK_THROWS_AS(task_loss(head, DomainBatch{real, std::nullopt}, DomainBatch{}), Error);
  const std::vector<int> bad = {0, 9, 1};
  CHECK_THROWS_AS(task_loss<double>(head, p, g.constant(to64(real)), bad, Var<double>(), {}), Error);
}

TEST_CASE("property: task loss is permutation invariant") {
  const TaskHead head = make_task_head(3, 2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed);
    const Tensor real = rand_tensor(Shape{4, 3, 8, 8}, 900 + seed);
    const Tensor fake = rand_tensor(Shape{4, 3, 8, 8}, 950 + seed);
    std::vector<int> rl(4), fl(4);
    for (int& l : rl) l = static_cast<int>(r.below(3));
    for (int& l : fl) l = static_cast<int>(r.below(3));
    const double base = task_loss(head, DomainBatch{real, rl}, DomainBatch{fake, fl});

    // Swap the two batches and reverse each.
    Tensor rr(real.shape()), ff(fake.shape());
    std::vector<int> rrl(4), ffl(4);
    const std::size_t d = 3 * 8 * 8;
    for (std::size_t i = 0; i < 4; ++i) {
      std::copy_n(fake.raw() + (3 - i) * d, d, rr.raw() + i * d);
      std::copy_n(real.raw() + (3 - i) * d, d, ff.raw() + i * d);
      rrl[i] = fl[3 - i];
      ffl[i] = rl[3 - i];
    }
    CHECK(std::abs(task_loss(head, DomainBatch{rr, rrl}, DomainBatch{ff, ffl}) - base) <= 1e-6);
  }
}

TEST_CASE("total loss") {
  CHECK(total_loss(0.5, 1.0, 0.1) == doctest::Approx(0.6));
  CHECK(total_loss(0.37, 12.0, 0.0) == 0.37);
  CHECK(total_loss(0.0, 0.0, 3.0) == 0.0);
  CHECK_THROWS_AS(total_loss(1.0, 1.0, -0.1), Error);
  Graph<float> g;
  Var<float> ld = g.constant(Tensor::scalar(0.5f));
  Var<float> lt = g.constant(Tensor::scalar(1.0f));
  CHECK(total_loss<float>(ld, lt, 0.1).value()[0] == doctest::Approx(0.6f));
  CHECK(total_loss<float>(ld, lt, 0.0).value()[0] == 0.5f);
}
