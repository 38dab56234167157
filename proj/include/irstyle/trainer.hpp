#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irstyle/dataset.hpp"
#include "irstyle/networks.hpp"
#include "irstyle/optim.hpp"
#include "irstyle/policy.hpp"

namespace irstyle {

enum class Backend { sliced, critic };
std::string_view to_string(Backend b);
Backend parse_backend(std::string_view name);

struct TrainConfig {
  std::size_t K = kDefaultStages;
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double lr_policy = 1e-2;
  double lr_critic = 1e-4;
  double lr_task = 1e-3;
  double epsilon = 0.1;
  Backend backend = Backend::sliced;
  std::size_t projections = 64;
  Schedule tau_select{1.0, 0.1};
  Schedule tau_gate{1.0, 1.0};
  std::uint64_t seed = 0;
  bool supervised = false;
  MixRatio mix_ratio{1, 7};
  std::size_t n_critic = kCriticSteps;
  double clip = kCriticClip;
  std::size_t resolution = kDistanceResolution;

  /// Throws ErrorKind::usage on a broken invariant.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
/// Fields missing from `doc` keep the values already in `base`; unknown
/// fields are a usage error.
TrainConfig config_from_json(const nlohmann::json& doc, TrainConfig base = {});

struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  double l_d = 0.0;
  double l_task = 0.0;
  double l_total = 0.0;
  double tau_select = 0.0;
  double tau_gate = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct OpCounters {
  std::uint64_t policy_forward = 0;
  std::uint64_t critic_forward = 0;
  std::uint64_t critic_updates = 0;
  std::uint64_t task_head_forward = 0;
  std::uint64_t task_head_updates = 0;
  bool operator==(const OpCounters&) const = default;
};

struct TrainReport {
  TrainConfig config;
  std::vector<StepRecord> records;
  PolicySummary summary;
  OpCounters counters;
  double wall_seconds = 0.0;
};

/// Epoch-based sampling without replacement: a seeded shuffle per epoch;
/// a new epoch starts when fewer than `batch` indices remain.
class EpochSampler {
 public:
  EpochSampler() = default;
  EpochSampler(std::size_t size, std::uint64_t seed);

  std::vector<std::size_t> next(std::size_t batch);
  std::size_t size() const noexcept { return order_.size(); }
  std::uint64_t epoch() const noexcept { return epoch_; }

  std::string save_state() const;
  void load_state(const std::string& state);
  bool operator==(const EpochSampler&) const = default;

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
  Rng rng_;
};

/// Everything a run needs to continue bit-exactly.
struct TrainState {
  TrainConfig config;
  Policy policy;
  AdamState policy_opt;
  ConvNet critic;  // empty unless backend == critic
  AdamState critic_opt;
  ConvNet head;  // empty unless supervised
  AdamState head_opt;
  Rng noise;
  Rng projections;
  EpochSampler source_sampler;
  EpochSampler target_sampler;
  std::vector<StepRecord> records;
  OpCounters counters;
  std::uint64_t step = 0;  // completed steps
};

/// Checks datasets against the config (sizes, labels, classes) and builds
/// the initial state. Throws before any training work.
TrainState init_train_state(const TrainConfig& config, const DomainDataset& source, const DomainDataset& target,
                            const OpRegistry& registry = OpRegistry::defaults());

/// One iteration. Datasets must already be at config.resolution.
void train_step(TrainState& state, const DomainDataset& source, const DomainDataset& target);

using StepCallback = std::function<void(const TrainState&)>;

/// Runs until state.step == config.steps (or `stop_after` completed steps).
TrainReport run_training(TrainState& state, const DomainDataset& source, const DomainDataset& target,
                         const StepCallback& after_step = {}, std::uint64_t stop_after = UINT64_MAX);

/// Resizes to the working resolution, initializes and runs.
std::pair<Policy, TrainReport> train(const TrainConfig& config, const DomainDataset& source,
                                     const DomainDataset& target);

/// Parameter tensors of a policy in stage order (w, mu01, p_logit).
std::vector<Tensor*> policy_params(Policy& policy);
std::vector<Tensor> policy_tensors(const Policy& policy);

/// Hard-stylizes each image of `images` with an rng seeded from
/// derive_seed(seed, i).
Tensor stylize_batch(const Policy& policy, const Tensor& images, std::uint64_t seed);

/// Sliced Wasserstein between `count` hard-stylized source images and
/// `count` target images (both picked by a seeded shuffle). A null policy is
/// the identity. Projections depend only on `seed`.
double evaluate_distance(const Policy* policy, const DomainDataset& source, const DomainDataset& target,
                         std::size_t count, std::size_t projections, std::uint64_t seed);

}  // namespace irstyle
