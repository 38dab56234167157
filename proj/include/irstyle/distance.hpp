#pragma once

// Training signals: sliced Wasserstein distance between image batches, the
// learned-critic Wasserstein surrogate, and the supervised task loss.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "irstyle/autodiff.hpp"
#include "irstyle/networks.hpp"
#include "irstyle/rng.hpp"

namespace irstyle {

inline constexpr std::size_t kDistanceResolution = 32;
inline constexpr double kCriticClip = 0.01;
inline constexpr std::size_t kCriticSteps = 5;

struct DomainBatch {
  Tensor images;                           // B x 3 x H x W
  std::optional<std::vector<int>> labels;  // length B when supervised

  std::size_t size() const { return images.rank() == 0 ? 0 : images.dim(0); }
};

/// dim x count matrix whose columns are unit directions.
Tensor draw_projections(std::size_t dim, std::size_t count, Rng& rng);

/// Mean over projections of the mean absolute difference between the sorted
/// projected rows of `a` and `b` (each flattened to B x D).
template <class R>
Var<R> sliced_wasserstein(Var<R> a, Var<R> b, const Tensor& projections);

/// Mean-pools square B x C x H x W down to `size` x `size` when H = size * 2^k;
/// returns x unchanged when H <= size.
template <class R>
Var<R> pool_to(Var<R> x, std::size_t size);

/// Batch-level distance: pools both batches to 32 x 32 and draws
/// `projections` directions from `rng`.
double sliced_wasserstein(const DomainBatch& a, const DomainBatch& b, std::size_t projections, Rng& rng);

template <class R>
struct CriticLosses {
  Var<R> critic;  // mean(critic(fake)) - mean(critic(real))
  Var<R> policy;  // -mean(critic(fake))
};

template <class R>
CriticLosses<R> critic_distance(const CriticNet& critic, std::span<const Var<R>> params, Var<R> real, Var<R> fake);

/// Summed cross-entropy of B x C logits against labels.
template <class R>
Var<R> cross_entropy_sum(Var<R> logits, std::span<const int> labels);

/// Mean cross-entropy over the concatenation of the real batch and the
/// stylized batch (which keeps its source labels). `fake` may be invalid or
/// empty.
template <class R>
Var<R> task_loss(const TaskHead& head, std::span<const Var<R>> params, Var<R> real, std::span<const int> real_labels,
                 Var<R> fake, std::span<const int> fake_labels);

/// Value-level task loss; throws when labels are missing.
double task_loss(const TaskHead& head, const DomainBatch& real, const DomainBatch& fake);

/// l_d + epsilon * l_task. With epsilon == 0 returns l_d itself.
template <class R>
Var<R> total_loss(Var<R> l_d, Var<R> l_task, double epsilon);
double total_loss(double l_d, double l_task, double epsilon);

}  // namespace irstyle
