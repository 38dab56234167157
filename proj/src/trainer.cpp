#include "irstyle/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace irstyle {

using nlohmann::json;

std::string_view to_string(Backend b) { return b == Backend::sliced ? "sliced" : "critic"; }

Backend parse_backend(std::string_view name) {
  if (name == "sliced") return Backend::sliced;
  if (name == "critic") return Backend::critic;
  fail(ErrorKind::usage, "unknown backend '" + std::string(name) + "' (sliced, critic)");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::usage, "config: " + msg); };
  if (K < 1) bad("K must be at least 1");
  if (steps < 1) bad("steps must be at least 1");
  if (batch_size < 2) bad("batch_size must be at least 2");
  // A zero policy rate freezes the policy; the network rates must move.
  if (!(lr_policy >= 0.0) || !std::isfinite(lr_policy)) bad("lr_policy must be non-negative");
  if (!(lr_critic > 0.0) || !std::isfinite(lr_critic)) bad("lr_critic must be positive");
  if (!(lr_task > 0.0) || !std::isfinite(lr_task)) bad("lr_task must be positive");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) bad("epsilon must be non-negative");
  if (projections < 1) bad("projections must be at least 1");
  for (const Schedule& s : {tau_select, tau_gate}) {
    if (!(s.start > 0.0) || !(s.end > 0.0) || !std::isfinite(s.start) || !std::isfinite(s.end)) {
      bad("temperatures must be positive");
    }
  }
  if (mix_ratio.stylized + mix_ratio.real == 0) bad("mix_ratio must select at least one record");
  if (n_critic < 1) bad("n_critic must be at least 1");
  if (!(clip > 0.0)) bad("clip must be positive");
  if (resolution < 8 || resolution % 8 != 0) bad("resolution must be a positive multiple of 8");
}

json to_json(const TrainConfig& c) {
  return json{{"K", c.K},
              {"steps", c.steps},
              {"batch_size", c.batch_size},
              {"lr_policy", c.lr_policy},
              {"lr_critic", c.lr_critic},
              {"lr_task", c.lr_task},
              {"epsilon", c.epsilon},
              {"backend", std::string(to_string(c.backend))},
              {"projections", c.projections},
              {"tau_select", {c.tau_select.start, c.tau_select.end}},
              {"tau_gate", {c.tau_gate.start, c.tau_gate.end}},
              {"seed", c.seed},
              {"supervised", c.supervised},
              {"mix_ratio", {c.mix_ratio.stylized, c.mix_ratio.real}},
              {"n_critic", c.n_critic},
              {"clip", c.clip},
              {"resolution", c.resolution}};
}

TrainConfig config_from_json(const json& doc, TrainConfig c) {
  if (!doc.is_object()) fail(ErrorKind::usage, "config must be a JSON object");
  try {
    for (const auto& [key, v] : doc.items()) {
      auto pair = [&](const char* what) {
        if (!v.is_array() || v.size() != 2) fail(ErrorKind::usage, std::string("config: ") + what + " must be [a, b]");
      };
      if (key == "K") c.K = v.get<std::size_t>();
      else if (key == "steps") c.steps = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "lr_policy") c.lr_policy = v.get<double>();
      else if (key == "lr_critic") c.lr_critic = v.get<double>();
      else if (key == "lr_task") c.lr_task = v.get<double>();
      else if (key == "epsilon") c.epsilon = v.get<double>();
      else if (key == "backend") c.backend = parse_backend(v.get<std::string>());
      else if (key == "projections") c.projections = v.get<std::size_t>();
      else if (key == "tau_select") { pair("tau_select"); c.tau_select = {v[0].get<double>(), v[1].get<double>()}; }
      else if (key == "tau_gate") { pair("tau_gate"); c.tau_gate = {v[0].get<double>(), v[1].get<double>()}; }
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "supervised") c.supervised = v.get<bool>();
      else if (key == "mix_ratio") { pair("mix_ratio"); c.mix_ratio = {v[0].get<std::size_t>(), v[1].get<std::size_t>()}; }
      else if (key == "n_critic") c.n_critic = v.get<std::size_t>();
      else if (key == "clip") c.clip = v.get<double>();
      else if (key == "resolution") c.resolution = v.get<std::size_t>();
      else fail(ErrorKind::usage, "config: unknown field '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::usage, std::string("config: ") + e.what());
  }
  return c;
}

EpochSampler::EpochSampler(std::size_t size, std::uint64_t seed) : order_(size), rng_(seed) {
  if (size == 0) fail(ErrorKind::data, "cannot sample from an empty dataset");
  reshuffle();
}

void EpochSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(std::span<std::size_t>(order_));
  pos_ = 0;
  ++epoch_;
}

std::vector<std::size_t> EpochSampler::next(std::size_t batch) {
  if (batch == 0 || batch > order_.size()) {
    fail(ErrorKind::data, "batch of " + std::to_string(batch) + " from a dataset of " + std::to_string(order_.size()));
  }
  if (pos_ + batch > order_.size()) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch));
  pos_ += batch;
  return out;
}

std::string EpochSampler::save_state() const {
  std::ostringstream os;
  os << order_.size() << ' ' << pos_ << ' ' << epoch_;
  for (std::size_t v : order_) os << ' ' << v;
  os << '\n' << rng_.save_state();
  return os.str();
}

void EpochSampler::load_state(const std::string& state) {
  std::istringstream is(state);
  std::size_t n = 0;
  if (!(is >> n >> pos_ >> epoch_)) fail(ErrorKind::data, "corrupt sampler state");
  order_.assign(n, 0);
  for (std::size_t& v : order_) {
    if (!(is >> v) || v >= n) fail(ErrorKind::data, "corrupt sampler state");
  }
  if (pos_ > n) fail(ErrorKind::data, "corrupt sampler state");
  is.get();
  std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  rng_.load_state(rest);
}

std::vector<Tensor*> policy_params(Policy& policy) {
  std::vector<Tensor*> out;
  for (Stage& s : policy.stages) {
    out.push_back(&s.w);
    out.push_back(&s.mu01);
    out.push_back(&s.p_logit);
  }
  return out;
}

std::vector<Tensor> policy_tensors(const Policy& policy) {
  std::vector<Tensor> out;
  for (const Stage& s : policy.stages) {
    out.push_back(s.w);
    out.push_back(s.mu01);
    out.push_back(s.p_logit);
  }
  return out;
}

namespace {

std::vector<Tensor*> net_params(ConvNet& net) {
  std::vector<Tensor*> out;
  for (Tensor& t : net.params()) out.push_back(&t);
  return out;
}

void check_resolution(const DomainDataset& d, std::size_t res, std::string_view name) {
  for (const ImageRecord& r : d.records) {
    if (r.image.shape() != Shape{3, res, res}) {
      fail(ErrorKind::data, std::string(name) + " image " + r.source_path + " is " + shape_string(r.image.shape()) +
                                ", expected 3x" + std::to_string(res) + "x" + std::to_string(res));
    }
  }
}

void check_finite(double v, std::string_view what, std::uint64_t step) {
  if (!std::isfinite(v)) {
    fail(ErrorKind::numeric, std::string(what) + " is not finite at step " + std::to_string(step));
  }
}

}  // namespace

TrainState init_train_state(const TrainConfig& config, const DomainDataset& source, const DomainDataset& target,
                            const OpRegistry& registry) {
  config.validate();
  if (source.empty()) fail(ErrorKind::data, "source dataset is empty");
  if (target.empty()) fail(ErrorKind::data, "target dataset is empty");
  source.validate();
  target.validate();
  if (config.supervised) {
    if (!source.labeled()) fail(ErrorKind::data, "supervised training needs labels on every source record");
    if (!target.labeled()) fail(ErrorKind::data, "supervised training needs labels on every target record");
    if (source.class_names != target.class_names) {
      fail(ErrorKind::data, "source and target class names differ");
    }
  }
  for (const DomainDataset* d : {&source, &target}) {
    if (d->size() < config.batch_size) {
      fail(ErrorKind::data, std::string(to_string(d->domain)) + " dataset has " + std::to_string(d->size()) +
                                " images, fewer than batch_size " + std::to_string(config.batch_size));
    }
  }
  TrainState s;
  s.config = config;
  s.policy = init_policy(config.K, registry, derive_seed(config.seed, "policy-init"));
  s.policy.tau_select = config.tau_select.start;
  s.policy.tau_gate = config.tau_gate.start;
  s.policy_opt = AdamState::zeros_like(policy_tensors(s.policy));
  if (config.backend == Backend::critic) {
    s.critic = make_critic(derive_seed(config.seed, "critic"));
    s.critic.clip(config.clip);
    s.critic_opt = AdamState::zeros_like(s.critic.params());
  }
  if (config.supervised) {
    s.head = make_task_head(source.class_names.size(), derive_seed(config.seed, "task-head"));
    s.head_opt = AdamState::zeros_like(s.head.params());
  }
  s.noise = Rng(derive_seed(config.seed, "gate-noise"));
  s.projections = Rng(derive_seed(config.seed, "projections"));
  s.source_sampler = EpochSampler(source.size(), derive_seed(config.seed, "source-sampler"));
  s.target_sampler = EpochSampler(target.size(), derive_seed(config.seed, "target-sampler"));
  return s;
}

void train_step(TrainState& s, const DomainDataset& source, const DomainDataset& target) {
  const TrainConfig& cfg = s.config;
  if (s.step >= cfg.steps) fail(ErrorKind::usage, "training already finished");
  const std::uint64_t step = s.step + 1;
  const double tau_select = anneal(cfg.tau_select, s.step, cfg.steps);
  const double tau_gate = anneal(cfg.tau_gate, s.step, cfg.steps);
  s.policy.tau_select = tau_select;
  s.policy.tau_gate = tau_gate;

  const auto si = s.source_sampler.next(cfg.batch_size);
  const auto ti = s.target_sampler.next(cfg.batch_size);
  const DomainBatch src = make_batch(source, si);
  const DomainBatch tgt = make_batch(target, ti);

  Graph<float> g;
  const auto vars = bind_policy(g, s.policy, true);
  Var<float> fake = relaxed_forward<float>(s.policy, vars, g.constant(src.images), s.noise);
  Var<float> real = g.constant(tgt.images);
  s.counters.policy_forward += 1;

  Var<float> fake_d = pool_to(fake, kDistanceResolution);
  Var<float> real_d = pool_to(real, kDistanceResolution);
  Var<float> l_d;
  if (cfg.backend == Backend::critic) {
    const Tensor fake_fixed = fake_d.value();
    for (std::size_t i = 0; i < cfg.n_critic; ++i) {
      Graph<float> gc;
      const auto cp = s.critic.bind(gc, true);
      const auto losses = critic_distance<float>(s.critic, cp, gc.constant(real_d.value()), gc.constant(fake_fixed));
      s.counters.critic_forward += 2;
      const Gradients<float> grads = gc.gradients(losses.critic);
      std::vector<Tensor> gl;
      for (const Var<float>& v : cp) gl.push_back(grads.wrt(v));
      adam_step(net_params(s.critic), gl, s.critic_opt, cfg.lr_critic);
      s.critic.clip(cfg.clip);
      s.counters.critic_updates += 1;
    }
    const auto cp = s.critic.bind(g, false);
    l_d = critic_distance<float>(s.critic, cp, real_d, fake_d).policy;
    s.counters.critic_forward += 2;
  } else {
    const Tensor proj = draw_projections(fake_d.numel() / cfg.batch_size, cfg.projections, s.projections);
    l_d = sliced_wasserstein(fake_d, real_d, proj);
  }

  Var<float> l_task;
  std::vector<Var<float>> hp;
  if (cfg.supervised) {
    hp = s.head.bind(g, true);
    l_task = task_loss<float>(s.head, hp, real, *tgt.labels, fake, *src.labels);
    s.counters.task_head_forward += 1;
  }
  Var<float> total = total_loss(l_d, l_task, cfg.epsilon);

  StepRecord rec;
  rec.step = step;
  rec.l_d = l_d.value()[0];
  rec.l_task = l_task.valid() ? l_task.value()[0] : 0.0;
  rec.l_total = total.value()[0];
  rec.tau_select = tau_select;
  rec.tau_gate = tau_gate;
  check_finite(rec.l_d, "L_d", step);
  check_finite(rec.l_task, "L_task", step);
  check_finite(rec.l_total, "L_total", step);

  const Gradients<float> grads = g.gradients(total);
  std::vector<Tensor> pg;
  for (const StageVars<float>& sv : vars) {
    pg.push_back(grads.wrt(sv.w));
    pg.push_back(grads.wrt(sv.mu01));
    pg.push_back(grads.wrt(sv.p_logit));
  }
  for (const Tensor& t : pg) {
    if (!t.all_finite()) fail(ErrorKind::numeric, "policy gradient is not finite at step " + std::to_string(step));
  }
  if (cfg.supervised) {
    // The head only reaches L_total through epsilon * L_task, so its
    // gradient is recovered by rescaling; a second pass is only needed when
    // epsilon is zero.
    std::vector<Tensor> hg;
    if (cfg.epsilon > 0.0) {
      const auto inv = static_cast<float>(1.0 / cfg.epsilon);
      for (const Var<float>& v : hp) {
        Tensor t = grads.wrt(v);
        for (float& x : t.data()) x *= inv;
        hg.push_back(std::move(t));
      }
    } else {
      const Gradients<float> tg = g.gradients(l_task);
      for (const Var<float>& v : hp) hg.push_back(tg.wrt(v));
    }
    adam_step(net_params(s.head), hg, s.head_opt, cfg.lr_task);
    s.counters.task_head_updates += 1;
  }
  adam_step(policy_params(s.policy), pg, s.policy_opt, cfg.lr_policy);
  s.policy.clamp_params();

  s.records.push_back(rec);
  s.step = step;
}

TrainReport run_training(TrainState& state, const DomainDataset& source, const DomainDataset& target,
                         const StepCallback& after_step, std::uint64_t stop_after) {
  check_resolution(source, state.config.resolution, "source");
  check_resolution(target, state.config.resolution, "target");
  const auto start = std::chrono::steady_clock::now();
  while (state.step < state.config.steps && state.step < stop_after) {
    train_step(state, source, target);
    if (after_step) after_step(state);
  }
  TrainReport report;
  report.config = state.config;
  report.records = state.records;
  report.summary = summary(state.policy);
  report.counters = state.counters;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::pair<Policy, TrainReport> train(const TrainConfig& config, const DomainDataset& source,
                                     const DomainDataset& target) {
  TrainState state = init_train_state(config, source, target);
  const DomainDataset src = resized(source, config.resolution);
  const DomainDataset tgt = resized(target, config.resolution);
  TrainReport report = run_training(state, src, tgt);
  return {state.policy, std::move(report)};
}

Tensor stylize_batch(const Policy& policy, const Tensor& images, std::uint64_t seed) {
  if (images.rank() != 4) fail(ErrorKind::shape, "stylize_batch expects B x 3 x H x W, got " + shape_string(images.shape()));
  const std::size_t b = images.dim(0);
  const Shape one(images.shape().begin() + 1, images.shape().end());
  const std::size_t per = shape_numel(one);
  Tensor out(images.shape());
  for (std::size_t i = 0; i < b; ++i) {
    Tensor img(one, std::vector<float>(images.raw() + i * per, images.raw() + (i + 1) * per));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const Tensor y = stylize(policy, img, rng);
    std::copy(y.data().begin(), y.data().end(), out.raw() + i * per);
  }
  return out;
}

double evaluate_distance(const Policy* policy, const DomainDataset& source, const DomainDataset& target,
                         std::size_t count, std::size_t projections, std::uint64_t seed) {
  if (count == 0 || count > source.size() || count > target.size()) {
    fail(ErrorKind::data, "evaluation needs " + std::to_string(count) + " images in each domain");
  }
  auto pick = [count](std::size_t n, std::uint64_t s) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(s);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(count);
    return idx;
  };
  const auto si = pick(source.size(), derive_seed(seed, "eval-source"));
  const auto ti = pick(target.size(), derive_seed(seed, "eval-target"));
  DomainBatch a = make_batch(source, si);
  const DomainBatch b = make_batch(target, ti);
  if (policy) a.images = stylize_batch(*policy, a.images, derive_seed(seed, "eval-stylize"));
  Rng proj(derive_seed(seed, "eval-projections"));
  return sliced_wasserstein(a, b, projections, proj);
}

}  // namespace irstyle
