#include <doctest.h>

#include <cmath>

#include "irstyle/synth.hpp"
#include "irstyle/trainer.hpp"

using namespace irstyle;

namespace {

const SynthDomains& data() {
  static const SynthDomains d = [] {
    SynthSpec s;
    s.num_images = 48;
    s.image_size = 32;
    return synth_generate(s, 21);
  }();
  return d;
}

TrainConfig small_config() {
  TrainConfig c;
  c.steps = 12;
  c.batch_size = 8;
  c.projections = 16;
  c.seed = 5;
  c.epsilon = 0.0;
  return c;
}

std::vector<double> l_d_sequence(const TrainReport& r) {
  std::vector<double> out;
  for (const StepRecord& s : r.records) out.push_back(s.l_d);
  return out;
}

// L_d, L_task and L_total recomputed for the next step from a copy of the
// state, using only public building blocks.
StepRecord replay_step(TrainState s, const DomainDataset& source, const DomainDataset& target) {
  const TrainConfig& cfg = s.config;
  s.policy.tau_select = anneal(cfg.tau_select, s.step, cfg.steps);
  s.policy.tau_gate = anneal(cfg.tau_gate, s.step, cfg.steps);
  const auto si = s.source_sampler.next(cfg.batch_size);
  const auto ti = s.target_sampler.next(cfg.batch_size);
  const DomainBatch src = make_batch(source, si);
  const DomainBatch tgt = make_batch(target, ti);
  const Tensor fake = relaxed_forward(s.policy, src.images, s.noise);
  Graph<float> g;
  const Tensor proj = draw_projections(3 * 32 * 32, cfg.projections, s.projections);
  StepRecord r;
  r.l_d = sliced_wasserstein<float>(g.constant(fake), g.constant(tgt.images), proj).value()[0];
  if (cfg.supervised) r.l_task = task_loss(s.head, tgt, DomainBatch{fake, src.labels});
  r.l_total = r.l_d + cfg.epsilon * r.l_task;
  return r;
}

}  // namespace

TEST_CASE("config validation and JSON") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    CHECK_THROWS_AS(t.validate(), Error);
  };
  bad([](TrainConfig& t) { t.steps = 0; });
  bad([](TrainConfig& t) { t.batch_size = 1; });
  bad([](TrainConfig& t) { t.lr_critic = 0.0; });
  bad([](TrainConfig& t) { t.lr_task = -1.0; });
  bad([](TrainConfig& t) { t.lr_policy = -1.0; });
  bad([](TrainConfig& t) { t.epsilon = -0.1; });
  bad([](TrainConfig& t) { t.K = 0; });
  bad([](TrainConfig& t) { t.tau_select = {1.0, 0.0}; });
  bad([](TrainConfig& t) { t.projections = 0; });

  c.seed = 0xdeadbeefcafe;
  c.backend = Backend::critic;
  c.supervised = true;
  c.tau_gate = {2.0, 0.5};
  CHECK(config_from_json(to_json(c)) == c);
  const TrainConfig partial = config_from_json(nlohmann::json{{"steps", 7}}, c);
  CHECK(partial.steps == 7);
  CHECK(partial.seed == c.seed);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"stpes", 7}}), Error);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"steps", "many"}}), Error);
  CHECK(parse_backend("critic") == Backend::critic);
  CHECK_THROWS_AS(parse_backend("gan"), Error);
}

TEST_CASE("epoch sampler") {
  EpochSampler s(10, 3);
  std::vector<int> seen(10, 0);
  for (int i = 0; i < 3; ++i) {
    for (std::size_t v : s.next(3)) seen[v] += 1;
  }
  for (int c : seen) CHECK(c <= 1);
  CHECK(s.epoch() == 1);
  s.next(3);  // only one left: new epoch
  CHECK(s.epoch() == 2);

  EpochSampler copy(10, 1);
  copy.load_state(s.save_state());
  CHECK(copy == s);
  CHECK(copy.next(4) == s.next(4));
  CHECK_THROWS_AS(s.next(11), Error);
  CHECK_THROWS_AS(copy.load_state("garbage"), Error);
  CHECK_THROWS_AS(EpochSampler(0, 1), Error);
}

TEST_CASE("identity beats a forced invert on identical domains") {
  const DomainDataset& src = data().source;
  TrainConfig c = small_config();
  c.steps = 1;
  TrainState base = init_train_state(c, src, src);
  const std::vector<FixedStage> ident(c.K, FixedStage{"identity"});
  const std::vector<FixedStage> inv(c.K, FixedStage{"invert"});

  TrainState a = base, b = base;
  a.policy = fixed_policy(OpRegistry::defaults(), ident);
  b.policy = fixed_policy(OpRegistry::defaults(), inv);
  train_step(a, src, src);
  train_step(b, src, src);
  CHECK(a.records[0].l_d < b.records[0].l_d);
}

TEST_CASE("training is deterministic") {
  const TrainConfig c = small_config();
  const auto [p1, r1] = train(c, data().source, data().target);
  const auto [p2, r2] = train(c, data().source, data().target);
  CHECK(serialize(p1) == serialize(p2));
  CHECK(r1.records == r2.records);
  CHECK(r1.records.size() == c.steps);
  for (std::size_t i = 0; i < r1.records.size(); ++i) CHECK(r1.records[i].step == i + 1);
}

TEST_CASE("frozen policy: loss depends only on sampling") {
  TrainConfig c = small_config();
  c.lr_policy = 0.0;
  c.tau_select = {1.0, 1.0};
  const auto [pa, ra] = train(c, data().source, data().target);
  const auto [pb, rb] = train(c, data().source, data().target);
  CHECK(l_d_sequence(ra) == l_d_sequence(rb));
  TrainConfig other = c;
  other.seed = 6;
  const auto [pc, rc] = train(other, data().source, data().target);
  CHECK(l_d_sequence(ra) != l_d_sequence(rc));
  // Parameters never moved.
  Policy init = init_policy(c.K, OpRegistry::defaults(), derive_seed(c.seed, "policy-init"));
  for (std::size_t k = 0; k < c.K; ++k) {
    CHECK(pa.stages[k].w == init.stages[k].w);
    CHECK(pa.stages[k].mu01 == init.stages[k].mu01);
    CHECK(pa.stages[k].p_logit == init.stages[k].p_logit);
  }
}

TEST_CASE("recorded losses match a recomputation from the same batches") {
  for (bool supervised : {false, true}) {
    CAPTURE(supervised);
    TrainConfig c = small_config();
    c.supervised = supervised;
    c.epsilon = supervised ? 0.1 : 0.0;
    c.steps = 6;
    TrainState s = init_train_state(c, data().source, data().target);
    while (s.step < c.steps) {
      const StepRecord want = replay_step(s, data().source, data().target);
      train_step(s, data().source, data().target);
      const StepRecord& got = s.records.back();
      CHECK(std::abs(got.l_d - want.l_d) <= 1e-6);
      CHECK(std::abs(got.l_task - want.l_task) <= 1e-6);
      CHECK(std::abs(got.l_total - want.l_total) <= 1e-6);
      CHECK(std::abs(got.l_total - (got.l_d + c.epsilon * got.l_task)) <= 1e-6);
      CHECK(got.tau_select == anneal(c.tau_select, got.step - 1, c.steps));
    }
  }
}

TEST_CASE("operation counters and clamped parameters") {
  TrainConfig c = small_config();
  TrainState s = init_train_state(c, data().source, data().target);
  bool in_range = true;
  run_training(s, data().source, data().target, [&](const TrainState& st) {
    for (const Stage& stage : st.policy.stages) {
      for (float v : stage.mu01.data()) in_range = in_range && v >= 0.0f && v <= 1.0f;
    }
  });
  CHECK(in_range);
  CHECK(s.counters.task_head_forward == 0);
  CHECK(s.counters.task_head_updates == 0);
  CHECK(s.counters.critic_forward == 0);
  CHECK(s.counters.policy_forward == c.steps);
  CHECK(s.head.empty());
  CHECK(s.critic.empty());

  TrainConfig sup = c;
  sup.supervised = true;
  sup.epsilon = 0.1;
  sup.steps = 3;
  TrainState t = init_train_state(sup, data().source, data().target);
  run_training(t, data().source, data().target);
  CHECK(t.counters.task_head_forward == 3);
  CHECK(t.counters.task_head_updates == 3);

  TrainConfig crit = c;
  crit.backend = Backend::critic;
  crit.steps = 2;
  TrainState u = init_train_state(crit, data().source, data().target);
  run_training(u, data().source, data().target);
  CHECK(u.counters.critic_updates == 2 * crit.n_critic);
  CHECK(u.counters.critic_forward == 2 * (2 * crit.n_critic + 2));
  for (const Tensor& w : u.critic.params()) {
    for (float v : w.data()) CHECK(std::abs(v) <= static_cast<float>(crit.clip));
  }
}

TEST_CASE("supervised head with epsilon zero still trains") {
  TrainConfig c = small_config();
  c.supervised = true;
  c.epsilon = 0.0;
  c.steps = 2;
  TrainState s = init_train_state(c, data().source, data().target);
  const std::vector<Tensor> before = s.head.params();
  run_training(s, data().source, data().target);
  CHECK(s.counters.task_head_updates == 2);
  CHECK_FALSE(s.head.params()[0] == before[0]);
  for (const StepRecord& r : s.records) CHECK(r.l_total == r.l_d);
}

TEST_CASE("errors before the loop starts") {
  TrainConfig c = small_config();
  c.supervised = true;
  DomainDataset unlabeled = data().source;
  for (ImageRecord& r : unlabeled.records) r.label.reset();
  CHECK_THROWS_AS(init_train_state(c, unlabeled, data().target), Error);
  DomainDataset renamed = data().target;
  renamed.class_names = {"x", "y"};
  CHECK_THROWS_AS(init_train_state(c, data().source, renamed), Error);
  c.supervised = false;
  CHECK_THROWS_AS(init_train_state(c, DomainDataset{}, data().target), Error);
  c.batch_size = 100;
  CHECK_THROWS_AS(init_train_state(c, data().source, data().target), Error);

  // Wrong working resolution.
  TrainConfig r = small_config();
  TrainState s = init_train_state(r, data().source, data().target);
  const DomainDataset big = resized(data().source, 64);
  CHECK_THROWS_AS(run_training(s, big, data().target), Error);
  // train() resizes first.
  r.steps = 1;
  CHECK_NOTHROW(train(r, big, data().target));
}

TEST_CASE("stylize_batch and evaluate_distance") {
  const Policy p = init_policy(4, OpRegistry::defaults(), 3);
  Tensor images(Shape{3, 3, 32, 32});
  for (std::size_t i = 0; i < 3; ++i) {
    std::copy(data().source.records[i].image.data().begin(), data().source.records[i].image.data().end(),
              images.data().begin() + static_cast<std::ptrdiff_t>(i * 3072));
  }
  const Tensor a = stylize_batch(p, images, 9);
  CHECK(stylize_batch(p, images, 9) == a);
  // Per-image streams: image i matches stylize() with derive_seed(9, i).
  for (std::size_t i = 0; i < 3; ++i) {
    Rng rng(derive_seed(9, static_cast<std::uint64_t>(i)));
    const Tensor one = stylize(p, data().source.records[i].image, rng);
    for (std::size_t j = 0; j < 3072; ++j) CHECK(a[i * 3072 + j] == one[j]);
  }

  const double d1 = evaluate_distance(nullptr, data().source, data().target, 32, 32, 4);
  CHECK(d1 == evaluate_distance(nullptr, data().source, data().target, 32, 32, 4));
  CHECK(d1 > 0.0);
  const std::vector<FixedStage> gi = {{"grayscale"}, {"invert"}};
  const Policy hidden = fixed_policy(OpRegistry::defaults(), gi);
  CHECK(evaluate_distance(&hidden, data().source, data().target, 32, 32, 4) < 0.5 * d1);
  CHECK(evaluate_distance(nullptr, data().source, data().source, 48, 32, 4) <= 1e-6);
}
