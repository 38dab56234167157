#include "irstyle/distance.hpp"

#include <cmath>

namespace irstyle {

Tensor draw_projections(std::size_t dim, std::size_t count, Rng& rng) {
  if (dim == 0 || count == 0) fail(ErrorKind::usage, "projections need positive dimension and count");
  Tensor p(Shape{dim, count});
  std::vector<double> column(dim);
  for (std::size_t c = 0; c < count; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : column) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t d = 0; d < dim; ++d) p[d * count + c] = static_cast<float>(column[d] / norm);
  }
  return p;
}

template <class R>
Var<R> sliced_wasserstein(Var<R> a, Var<R> b, const Tensor& projections) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.empty() || sa[0] != sb[0]) {
    fail(ErrorKind::shape, "sliced_wasserstein: batch sizes differ (" + shape_string(sa) + " vs " + shape_string(sb) + ")");
  }
  if (sa != sb) {
    fail(ErrorKind::shape, "sliced_wasserstein: image shapes differ (" + shape_string(sa) + " vs " + shape_string(sb) + ")");
  }
  const std::size_t batch = sa[0];
  const std::size_t dim = a.numel() / batch;
  if (projections.rank() != 2 || projections.dim(0) != dim) {
    fail(ErrorKind::shape, "sliced_wasserstein: projections " + shape_string(projections.shape()) +
                               " do not match dimension " + std::to_string(dim));
  }
  Graph<R>& g = a.graph();
  Var<R> proj = g.constant(projections.cast<R>());
  Var<R> pa = sort_columns(matmul(reshape(a, Shape{batch, dim}), proj));
  Var<R> pb = sort_columns(matmul(reshape(b, Shape{batch, dim}), proj));
  return mean(abs(sub(pa, pb)));
}

template <class R>
Var<R> pool_to(Var<R> x, std::size_t size) {
  const Shape& s = x.shape();
  if (s.size() < 2) fail(ErrorKind::shape, "pool_to expects spatial axes");
  std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  if (h != w) fail(ErrorKind::shape, "pool_to: images must be square, got " + shape_string(s));
  if (h <= size) return x;
  while (h > size) {
    if (h % 2 != 0) fail(ErrorKind::shape, "pool_to: " + shape_string(s) + " is not a power-of-two multiple of " + std::to_string(size));
    x = mean_pool2(x);
    h /= 2;
  }
  if (h != size) fail(ErrorKind::shape, "pool_to: " + shape_string(s) + " is not a power-of-two multiple of " + std::to_string(size));
  return x;
}

double sliced_wasserstein(const DomainBatch& a, const DomainBatch& b, std::size_t projections, Rng& rng) {
  if (a.size() != b.size()) {
    fail(ErrorKind::shape, "sliced_wasserstein: batch sizes differ (" + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()) + ")");
  }
  Graph<float> g;
  Var<float> va = g.constant(a.images);
  Var<float> vb = g.constant(b.images);
  if (a.images.rank() == 4) {
    va = pool_to(va, kDistanceResolution);
    vb = pool_to(vb, kDistanceResolution);
  }
  const Tensor proj = draw_projections(va.numel() / a.size(), projections, rng);
  return sliced_wasserstein(va, vb, proj).value()[0];
}

template <class R>
CriticLosses<R> critic_distance(const CriticNet& critic, std::span<const Var<R>> params, Var<R> real, Var<R> fake) {
  Var<R> score_real = mean(critic.forward(params, real));
  Var<R> score_fake = mean(critic.forward(params, fake));
  return {sub(score_fake, score_real), mul_scalar(score_fake, -1.0)};
}

template <class R>
Var<R> cross_entropy_sum(Var<R> logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    fail(ErrorKind::shape, "cross_entropy: logits " + shape_string(s) + " vs " + std::to_string(labels.size()) + " labels");
  }
  BasicTensor<R> onehot(s);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= s[1]) {
      fail(ErrorKind::data, "label " + std::to_string(labels[i]) + " out of range for " + std::to_string(s[1]) + " classes");
    }
    onehot[i * s[1] + static_cast<std::size_t>(labels[i])] = R(1);
  }
  Graph<R>& g = logits.graph();
  return mul_scalar(sum(mul(log_softmax(logits), g.constant(std::move(onehot)))), -1.0);
}

template <class R>
Var<R> task_loss(const TaskHead& head, std::span<const Var<R>> params, Var<R> real, std::span<const int> real_labels,
                 Var<R> fake, std::span<const int> fake_labels) {
  const bool has_fake = fake.valid() && fake.numel() > 0;
  Var<R> images = real;
  std::vector<int> labels(real_labels.begin(), real_labels.end());
  if (has_fake) {
    const Var<R> parts[] = {real, fake};
    images = concat<R>(parts);
    labels.insert(labels.end(), fake_labels.begin(), fake_labels.end());
  }
  const std::size_t count = labels.size();
  if (count == 0) fail(ErrorKind::usage, "task loss over an empty batch");
  return mul_scalar(cross_entropy_sum(head.forward(params, images), std::span<const int>(labels)),
                    1.0 / static_cast<double>(count));
}

double task_loss(const TaskHead& head, const DomainBatch& real, const DomainBatch& fake) {
  if (!real.labels || (fake.size() > 0 && !fake.labels)) fail(ErrorKind::usage, "task loss needs labels");
  Graph<float> g;
  const auto params = head.bind(g, false);
  Var<float> fv;
  std::span<const int> fl;
  if (fake.size() > 0) {
    fv = g.constant(fake.images);
    fl = *fake.labels;
  }
  return task_loss<float>(head, params, g.constant(real.images), *real.labels, fv, fl).value()[0];
}

template <class R>
Var<R> total_loss(Var<R> l_d, Var<R> l_task, double epsilon) {
  if (!(epsilon >= 0.0)) fail(ErrorKind::usage, "epsilon must be non-negative");
  if (epsilon == 0.0 || !l_task.valid()) return l_d;
  return add(l_d, mul_scalar(l_task, epsilon));
}

double total_loss(double l_d, double l_task, double epsilon) {
  if (!(epsilon >= 0.0)) fail(ErrorKind::usage, "epsilon must be non-negative");
  if (epsilon == 0.0) return l_d;
  return l_d + epsilon * l_task;
}

#define IRSTYLE_INSTANTIATE(R)                                                                          \
  template Var<R> sliced_wasserstein(Var<R>, Var<R>, const Tensor&);                                    \
  template Var<R> pool_to(Var<R>, std::size_t);                                                         \
  template CriticLosses<R> critic_distance(const CriticNet&, std::span<const Var<R>>, Var<R>, Var<R>);  \
  template Var<R> cross_entropy_sum(Var<R>, std::span<const int>);                                      \
  template Var<R> task_loss(const TaskHead&, std::span<const Var<R>>, Var<R>, std::span<const int>,     \
                            Var<R>, std::span<const int>);                                              \
  template Var<R> total_loss(Var<R>, Var<R>, double);

IRSTYLE_INSTANTIATE(float)
IRSTYLE_INSTANTIATE(double)

#undef IRSTYLE_INSTANTIATE

}  // namespace irstyle
