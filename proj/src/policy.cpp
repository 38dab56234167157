#include "irstyle/policy.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace irstyle {

using nlohmann::json;

void Policy::validate() const {
  if (stages.empty()) fail(ErrorKind::validation, "policy needs at least one stage");
  if (!(tau_select > 0.0) || !(tau_gate > 0.0)) {
    fail(ErrorKind::validation, "policy temperatures must be positive");
  }
  const std::size_t n = registry.size();
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const Stage& s = stages[k];
    for (const Tensor* t : {&s.w, &s.mu01, &s.p_logit}) {
      if (t->rank() != 1 || t->numel() != n) {
        fail(ErrorKind::validation, "stage " + std::to_string(k) + " vectors must have length " + std::to_string(n));
      }
      if (!t->all_finite()) fail(ErrorKind::validation, "stage " + std::to_string(k) + " holds a non-finite value");
    }
    for (float v : s.mu01.data()) {
      if (v < 0.0f || v > 1.0f) fail(ErrorKind::validation, "stage " + std::to_string(k) + " mu01 outside [0, 1]");
    }
  }
}

void Policy::clamp_params() {
  for (Stage& s : stages) {
    for (float& v : s.mu01.data()) v = std::clamp(v, 0.0f, 1.0f);
  }
}

std::vector<double> Policy::selection_probs(std::size_t k) const {
  const Tensor& w = stages.at(k).w;
  std::vector<double> p(w.numel());
  double mx = -INFINITY;
  for (float v : w.data()) mx = std::max(mx, static_cast<double>(v) / tau_select);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(static_cast<double>(w[i]) / tau_select - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

double Policy::apply_prob(std::size_t k, std::size_t op) const {
  const double z = stages.at(k).p_logit[op];
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

Policy init_policy(std::size_t num_stages, OpRegistry registry, std::uint64_t seed) {
  if (num_stages < 1) fail(ErrorKind::usage, "policy needs at least one stage");
  Policy p;
  p.registry = std::move(registry);
  const std::size_t n = p.registry.size();
  Rng rng(derive_seed(seed, "policy-init"));
  for (std::size_t k = 0; k < num_stages; ++k) {
    Stage s{Tensor(Shape{n}), Tensor(Shape{n}, 0.5f), Tensor(Shape{n}, 0.0f)};
    for (float& v : s.w.data()) v = static_cast<float>(rng.uniform(-0.01, 0.01));
    p.stages.push_back(std::move(s));
  }
  return p;
}

Policy fixed_policy(const OpRegistry& registry, std::span<const FixedStage> stages, double margin, double p_logit) {
  if (stages.empty()) fail(ErrorKind::usage, "policy needs at least one stage");
  Policy p;
  p.registry = registry;
  const std::size_t n = registry.size();
  for (const FixedStage& fs : stages) {
    const auto id = static_cast<std::size_t>(registry.descriptor(fs.op).id);
    Stage s{Tensor(Shape{n}), Tensor(Shape{n}, 0.5f), Tensor(Shape{n}, static_cast<float>(p_logit))};
    s.w[id] = static_cast<float>(margin);
    s.mu01[id] = static_cast<float>(fs.mu01);
    p.stages.push_back(std::move(s));
  }
  p.validate();
  return p;
}

PolicySummary summary(const Policy& policy) {
  const std::size_t n = policy.num_ops();
  PolicySummary out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  for (std::size_t k = 0; k < policy.num_stages(); ++k) {
    const std::vector<double> probs = policy.selection_probs(k);
    for (std::size_t i = 0; i < n; ++i) {
      out.expected_count[i] += probs[i];
      if (policy.registry[i].has_param) {
        out.expected_param[i] += probs[i] * static_cast<double>(policy.stages[k].mu01[i]);
      }
    }
  }
  return out;
}

template <class R>
std::vector<StageVars<R>> bind_policy(Graph<R>& graph, const Policy& policy, bool trainable) {
  std::vector<StageVars<R>> out;
  out.reserve(policy.num_stages());
  for (std::size_t k = 0; k < policy.num_stages(); ++k) {
    const Stage& s = policy.stages[k];
    const std::string tag = "stage" + std::to_string(k);
    out.push_back({graph.leaf(s.w.cast<R>(), trainable, tag + ".w"),
                   graph.leaf(s.mu01.cast<R>(), trainable, tag + ".mu01"),
                   graph.leaf(s.p_logit.cast<R>(), trainable, tag + ".p_logit")});
  }
  return out;
}

template <class R>
Var<R> relaxed_forward(const Policy& policy, std::span<const StageVars<R>> vars, Var<R> x, Rng& noise) {
  if (vars.size() != policy.num_stages()) fail(ErrorKind::usage, "stage variables do not match the policy");
  const Shape in_shape = x.shape();
  const bool single = in_shape.size() == 3;
  if (single) x = reshape(x, Shape{1, in_shape[0], in_shape[1], in_shape[2]});
  if (x.shape().size() != 4 || x.shape()[1] != 3) {
    fail(ErrorKind::shape, "relaxed_forward expects 3 x H x W or B x 3 x H x W, got " + shape_string(in_shape));
  }
  Graph<R>& g = x.graph();
  const std::size_t batch = x.shape()[0];
  const std::size_t n_ops = policy.num_ops();
  for (const StageVars<R>& sv : vars) {
    Var<R> select = softmax(mul_scalar(sv.w, 1.0 / policy.tau_select));
    std::vector<Var<R>> outs;
    outs.reserve(n_ops);
    for (std::size_t n = 0; n < n_ops; ++n) {
      const bool has_param = policy.registry[n].has_param;
      outs.push_back(apply_smooth(policy.registry, static_cast<int>(n), x, has_param ? index(sv.mu01, n) : Var<R>{}));
    }
    // Noise order: op-major, then image.
    BasicTensor<R> logistic(Shape{batch, n_ops});
    for (std::size_t n = 0; n < n_ops; ++n) {
      for (std::size_t b = 0; b < batch; ++b) logistic[b * n_ops + n] = static_cast<R>(noise.logistic());
    }
    Var<R> gates = sigmoid(mul_scalar(add(g.constant(std::move(logistic)), sv.p_logit), 1.0 / policy.tau_gate));
    x = gated_mixture<R>(x, outs, gates, select);
  }
  if (single) x = reshape(x, in_shape);
  return x;
}

Tensor relaxed_forward(const Policy& policy, const Tensor& x, Rng& noise) {
  Graph<float> g;
  const auto vars = bind_policy(g, policy, false);
  return relaxed_forward<float>(policy, vars, g.constant(x), noise).value();
}

Tensor stylize(const Policy& policy, const Tensor& image, Rng& rng) {
  Tensor x = image;
  for (std::size_t k = 0; k < policy.num_stages(); ++k) {
    const std::vector<double> probs = policy.selection_probs(k);
    const double u = rng.uniform_open();
    const double gate = rng.uniform();
    std::size_t chosen = probs.size() - 1;
    double cumulative = 0.0;
    for (std::size_t n = 0; n < probs.size(); ++n) {
      cumulative += probs[n];
      if (u < cumulative) {
        chosen = n;
        break;
      }
    }
    if (gate < policy.apply_prob(k, chosen)) {
      x = apply_hard(policy.registry, static_cast<int>(chosen), x, policy.stages[k].mu01[chosen]);
    }
  }
  return x;
}

namespace {

json to_json_array(const Tensor& t) {
  json arr = json::array();
  for (float v : t.data()) arr.push_back(static_cast<double>(v));
  return arr;
}

Tensor from_json_array(const json& arr, std::size_t n, const std::string& what) {
  if (!arr.is_array() || arr.size() != n) {
    fail(ErrorKind::validation, what + " must be an array of length " + std::to_string(n));
  }
  Tensor t(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    if (!arr[i].is_number()) fail(ErrorKind::data, what + " holds a non-number");
    t[i] = static_cast<float>(arr[i].get<double>());
  }
  return t;
}

}  // namespace

std::string serialize(const Policy& policy) {
  json doc;
  doc["version"] = kPolicyFormatVersion;
  doc["registry"] = policy.registry.names();
  doc["tau_select"] = policy.tau_select;
  doc["tau_gate"] = policy.tau_gate;
  json stages = json::array();
  for (const Stage& s : policy.stages) {
    stages.push_back({{"w", to_json_array(s.w)}, {"mu01", to_json_array(s.mu01)}, {"p_logit", to_json_array(s.p_logit)}});
  }
  doc["stages"] = std::move(stages);
  return doc.dump(2) + "\n";
}

Policy deserialize(std::string_view text, const OpRegistry& registry) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::data, std::string("malformed policy document: ") + e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("version")) fail(ErrorKind::data, "policy document lacks a version");
    const int version = doc.at("version").get<int>();
    if (version != kPolicyFormatVersion) {
      fail(ErrorKind::version, "policy format version " + std::to_string(version) + " is not supported (expected " +
                                   std::to_string(kPolicyFormatVersion) + ")");
    }
    const auto names = doc.at("registry").get<std::vector<std::string>>();
    if (names != registry.names()) {
      fail(ErrorKind::registry, "policy operation names do not match the registry");
    }
    Policy p;
    p.registry = registry;
    p.tau_select = doc.at("tau_select").get<double>();
    p.tau_gate = doc.at("tau_gate").get<double>();
    const json& stages = doc.at("stages");
    if (!stages.is_array()) fail(ErrorKind::data, "stages must be an array");
    const std::size_t n = registry.size();
    for (std::size_t k = 0; k < stages.size(); ++k) {
      const json& s = stages[k];
      const std::string tag = "stage " + std::to_string(k);
      p.stages.push_back({from_json_array(s.at("w"), n, tag + " w"), from_json_array(s.at("mu01"), n, tag + " mu01"),
                          from_json_array(s.at("p_logit"), n, tag + " p_logit")});
    }
    p.validate();
    return p;
  } catch (const json::exception& e) {
    fail(ErrorKind::data, std::string("malformed policy document: ") + e.what());
  }
}

template std::vector<StageVars<float>> bind_policy(Graph<float>&, const Policy&, bool);
template std::vector<StageVars<double>> bind_policy(Graph<double>&, const Policy&, bool);
template Var<float> relaxed_forward(const Policy&, std::span<const StageVars<float>>, Var<float>, Rng&);
template Var<double> relaxed_forward(const Policy&, std::span<const StageVars<double>>, Var<double>, Rng&);

}  // namespace irstyle
