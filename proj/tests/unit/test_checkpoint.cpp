#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "irstyle/checkpoint.hpp"
#include "irstyle/image_io.hpp"
#include "irstyle/synth.hpp"

using namespace irstyle;
namespace fs = std::filesystem;

namespace {

const SynthDomains& data() {
  static const SynthDomains d = [] {
    SynthSpec s;
    s.num_images = 40;
    return synth_generate(s, 8);
  }();
  return d;
}

ErrorKind kind_of(std::string_view bytes, const OpRegistry& registry = OpRegistry::defaults()) {
  try {
    decode_checkpoint(bytes, registry);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("decoded without error");
  return ErrorKind::usage;
}

void check_same_state(const TrainState& a, const TrainState& b) {
  CHECK(a.config == b.config);
  CHECK(a.step == b.step);
  CHECK(serialize(a.policy) == serialize(b.policy));
  CHECK(a.policy_opt.step == b.policy_opt.step);
  REQUIRE(a.policy_opt.m.size() == b.policy_opt.m.size());
  for (std::size_t i = 0; i < a.policy_opt.m.size(); ++i) {
    CHECK(a.policy_opt.m[i] == b.policy_opt.m[i]);
    CHECK(a.policy_opt.v[i] == b.policy_opt.v[i]);
  }
  CHECK(a.critic.empty() == b.critic.empty());
  CHECK(a.critic.params() == b.critic.params());
  CHECK(a.head.params() == b.head.params());
  CHECK(a.noise == b.noise);
  CHECK(a.projections == b.projections);
  CHECK(a.source_sampler == b.source_sampler);
  CHECK(a.target_sampler == b.target_sampler);
  CHECK(a.records == b.records);
  CHECK(a.counters == b.counters);
}

TrainConfig config_for(Backend backend, bool supervised) {
  TrainConfig c;
  c.steps = 20;
  c.batch_size = 8;
  c.projections = 8;
  c.seed = 13;
  c.backend = backend;
  c.supervised = supervised;
  c.epsilon = supervised ? 0.1 : 0.0;
  c.n_critic = 2;
  return c;
}

}  // namespace

TEST_CASE("resume at mid-run reproduces the uninterrupted trajectory bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "irstyle_test_checkpoint";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (Backend backend : {Backend::sliced, Backend::critic}) {
    for (bool supervised : {false, true}) {
      CAPTURE(to_string(backend));
      CAPTURE(supervised);
      const TrainConfig c = config_for(backend, supervised);
      TrainState full = init_train_state(c, data().source, data().target);
      run_training(full, data().source, data().target);

      TrainState half = init_train_state(c, data().source, data().target);
      run_training(half, data().source, data().target, {}, 10);
      REQUIRE(half.step == 10);
      checkpoint_save(half, dir / "mid.ckpt");
      TrainState resumed = checkpoint_load(dir / "mid.ckpt");
      check_same_state(half, resumed);
      run_training(resumed, data().source, data().target);
      check_same_state(full, resumed);
      CHECK(encode_checkpoint(full) == encode_checkpoint(resumed));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("moments and rng state survive encoding") {
  const TrainConfig c = config_for(Backend::critic, true);
  TrainState s = init_train_state(c, data().source, data().target);
  run_training(s, data().source, data().target, {}, 3);
  const std::string bytes = encode_checkpoint(s);
  const TrainState back = decode_checkpoint(bytes);
  check_same_state(s, back);
  CHECK(encode_checkpoint(back) == bytes);
  // Next draws agree.
  Rng a = s.noise, b = back.noise;
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("checkpoint errors") {
  const TrainConfig c = config_for(Backend::sliced, false);
  TrainState s = init_train_state(c, data().source, data().target);
  run_training(s, data().source, data().target, {}, 2);
  const std::string bytes = encode_checkpoint(s);

  CHECK(kind_of("") == ErrorKind::data);
  CHECK(kind_of("NOTACKPT" + bytes.substr(8)) == ErrorKind::data);
  for (std::size_t cut : {std::size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK(kind_of(bytes.substr(0, cut)) == ErrorKind::data);
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x40);
  CHECK(kind_of(flipped) == ErrorKind::data);

  std::string future = bytes;
  const std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(future.data() + 8, &v, sizeof v);
  CHECK(kind_of(future) == ErrorKind::version);

  OpRegistry other = OpRegistry::defaults();
  other.add("sharpen", OpKind::identity, false);
  CHECK(kind_of(bytes, other) == ErrorKind::registry);

  CHECK_THROWS_AS(checkpoint_load(fs::temp_directory_path() / "irstyle_no_such.ckpt"), Error);
}
