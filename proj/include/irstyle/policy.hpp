#pragma once

// K-stage stylization policy. Each stage holds selection logits over the
// operation dictionary, a normalized parameter per operation and an
// application-probability logit per operation.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "irstyle/autodiff.hpp"
#include "irstyle/ops.hpp"
#include "irstyle/rng.hpp"

namespace irstyle {

inline constexpr std::size_t kDefaultStages = 4;
inline constexpr int kPolicyFormatVersion = 1;

struct Stage {
  Tensor w;        // selection logits, length N
  Tensor mu01;     // normalized parameters in [0, 1], length N
  Tensor p_logit;  // application probability p = sigmoid(p_logit), length N
};

struct Policy {
  OpRegistry registry;
  std::vector<Stage> stages;
  double tau_select = 1.0;
  double tau_gate = 1.0;

  std::size_t num_stages() const noexcept { return stages.size(); }
  std::size_t num_ops() const noexcept { return registry.size(); }

  /// Throws ErrorKind::validation when an invariant is broken.
  void validate() const;
  /// Clamps every mu01 entry into [0, 1].
  void clamp_params();

  /// Softmax of stage k's logits at the current selection temperature.
  std::vector<double> selection_probs(std::size_t k) const;
  double apply_prob(std::size_t k, std::size_t op) const;
};

/// w ~ U(-0.01, 0.01), mu01 = 0.5, p_logit = 0, both temperatures 1.
Policy init_policy(std::size_t num_stages, OpRegistry registry, std::uint64_t seed);

struct FixedStage {
  std::string op;
  double mu01 = 0.5;
};

/// One stage per entry with selection logit `margin` on the named op (0
/// elsewhere) and every application logit set to `p_logit`.
Policy fixed_policy(const OpRegistry& registry, std::span<const FixedStage> stages, double margin = 40.0,
                    double p_logit = 40.0);

struct PolicySummary {
  std::vector<double> expected_count;  // per op: sum_k softmax(w_k)[n]
  std::vector<double> expected_param;  // per op: sum_k softmax(w_k)[n] * mu01_k[n]; 0 without a param
};

PolicySummary summary(const Policy& policy);

template <class R>
struct StageVars {
  Var<R> w;
  Var<R> mu01;
  Var<R> p_logit;
};

/// Adds the policy tensors to `graph` as leaves.
template <class R>
std::vector<StageVars<R>> bind_policy(Graph<R>& graph, const Policy& policy, bool trainable);

/// Relaxed forward pass on 3 x H x W or B x 3 x H x W input. For each stage
/// every operation's smooth output is gated against the input with a
/// logistic-relaxed Bernoulli (noise drawn from `noise`, one draw per stage,
/// op and image in that order) and the gated outputs are mixed by the
/// selection softmax.
template <class R>
Var<R> relaxed_forward(const Policy& policy, std::span<const StageVars<R>> vars, Var<R> x, Rng& noise);

/// Float convenience wrapper without gradients.
Tensor relaxed_forward(const Policy& policy, const Tensor& x, Rng& noise);

/// Sampled stylization of one 3 x H x W image: per stage, draw an operation
/// from the selection distribution, then apply its hard form with its
/// application probability.
Tensor stylize(const Policy& policy, const Tensor& image, Rng& rng);

std::string serialize(const Policy& policy);
/// Throws ErrorKind::data (malformed), ::version, ::registry (op names differ
/// from `registry`) or ::validation.
Policy deserialize(std::string_view text, const OpRegistry& registry = OpRegistry::defaults());

}  // namespace irstyle
