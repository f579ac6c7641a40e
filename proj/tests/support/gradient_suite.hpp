#pragma once

// Finite-difference checks for every layer kind and both policy networks. Each check returns the
// worst relative error per checked tensor so gtest and the acceptance runner share one code path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "memnav/autodiff.hpp"
#include "memnav/policy.hpp"
#include "support/gradcheck.hpp"

namespace memnav::testing {

inline constexpr double kGradTolerance = 1e-4;

struct GradCheck {
  std::string what;
  double error = 0.0;
};

inline ad::Tensor random_tensor(ad::Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ad::Tensor t(std::move(s));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

inline Observation random_obs(Rng& rng, int rays = kDefaultRays) {
  Observation o;
  o.rays = rays;
  o.values.resize(static_cast<std::size_t>(rays) * 3);
  for (double& v : o.values) v = rng.uniform();
  return o;
}

inline ad::Tensor random_rows(Rng& rng, std::size_t n, double scale = 1.0) {
  ad::Tensor t({n, ReachabilityModel::kEmbedDim});
  for (double& v : t.values) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

// Input and parameter gradients of a single-input layer under the scalar loss sum(w * y), random w.
// forward_loss re-runs the layer as the numeric side sees it (infer() unless overridden).
inline std::vector<GradCheck> check_layer(ad::Layer& layer, ad::Tensor x, Rng& rng,
                                          std::function<ad::Tensor(const ad::Tensor&)> forward_loss = {}) {
  if (!forward_loss) forward_loss = [&](const ad::Tensor& in) { return layer.infer(in); };
  ad::ParameterList params;
  layer.collect(params);
  for (ad::Parameter* p : params) p->zero_grad();
  const ad::Tensor y = layer.forward(x);
  const ad::Tensor w = random_tensor(y.shape, rng);
  const ad::Tensor dx = layer.backward(w);
  auto loss = [&] { return weighted_sum(forward_loss(x).values, w.values); };
  std::vector<GradCheck> out;
  out.push_back({layer.kind_name() + " input", max_relative_error(dx.values, numeric_gradient(x.values, loss))});
  for (ad::Parameter* p : params) {
    out.push_back({layer.kind_name() + " " + p->name, max_relative_error(p->value.grad, numeric_gradient(p->value.values, loss))});
  }
  return out;
}

namespace grad {

inline std::vector<GradCheck> linear(int seed) {
  Rng rng(static_cast<std::uint64_t>(seed));
  ad::Linear l("lin", 7, 5, rng);
  return check_layer(l, random_tensor({3, 7}, rng), rng);
}

inline std::vector<GradCheck> conv1d(int seed) {
  Rng rng(static_cast<std::uint64_t>(100 + seed));
  ad::Conv1d c("conv", 3, 4, 5, 2, 2, rng);
  return check_layer(c, random_tensor({2, 3, 13}, rng), rng);
}

inline std::vector<GradCheck> relu(int seed) {
  Rng rng(static_cast<std::uint64_t>(200 + seed));
  ad::ReLU r;
  return check_layer(r, random_tensor({4, 9}, rng), rng);
}

inline std::vector<GradCheck> layer_norm(int seed) {
  Rng rng(static_cast<std::uint64_t>(300 + seed));
  ad::LayerNorm ln("ln", 6);
  ad::ParameterList ps;
  ln.collect(ps);
  for (ad::Parameter* p : ps)
    for (double& v : p->value.values) v = rng.uniform(0.5, 1.5);
  return check_layer(ln, random_tensor({3, 6}, rng), rng);
}

inline std::vector<GradCheck> softmax(int seed) {
  Rng rng(static_cast<std::uint64_t>(400 + seed));
  ad::Softmax s;
  return check_layer(s, random_tensor({3, 5}, rng, -2, 2), rng);
}

inline std::vector<GradCheck> sigmoid(int seed) {
  Rng rng(static_cast<std::uint64_t>(500 + seed));
  ad::Sigmoid s;
  return check_layer(s, random_tensor({2, 7}, rng, -3, 3), rng);
}

inline std::vector<GradCheck> embedding(int seed) {
  Rng rng(static_cast<std::uint64_t>(600 + seed));
  ad::Embedding e("emb", 6, 4, rng);
  const std::vector<std::size_t> idx = {1, 4, 1, 0};
  e.table().zero_grad();
  const ad::Tensor w = random_tensor({idx.size(), 4}, rng);
  for (std::size_t n = 0; n < idx.size(); ++n) e.accumulate(idx[n], w.row(n));
  auto loss = [&] { return weighted_sum(e.lookup(idx).values, w.values); };
  return {{"Embedding table", max_relative_error(e.table().value.grad, numeric_gradient(e.table().value.values, loss))}};
}

inline std::vector<GradCheck> attention(int seed) {
  Rng rng(static_cast<std::uint64_t>(700 + seed));
  ad::MultiHeadAttention att("att", 8, 6, 2, rng);
  ad::Tensor q = random_tensor({3, 8}, rng);
  ad::PackedRows mem;
  mem.rows = random_tensor({5, 6}, rng);
  mem.offsets = {0, 2, 2, 5};  // middle sample has empty memory
  ad::ParameterList params;
  att.collect(params);
  for (ad::Parameter* p : params) p->zero_grad();
  att.forward(q, mem);
  const ad::Tensor w = random_tensor({3, 8}, rng);
  auto g = att.backward(w);
  auto loss = [&] { return weighted_sum(att.infer(q, mem).values, w.values); };
  std::vector<GradCheck> out;
  out.push_back({"Attention query", max_relative_error(g.query.values, numeric_gradient(q.values, loss))});
  out.push_back({"Attention memory", max_relative_error(g.memory.values, numeric_gradient(mem.rows.values, loss))});
  for (ad::Parameter* p : params) out.push_back({"Attention " + p->name, max_relative_error(p->value.grad, numeric_gradient(p->value.values, loss))});
  return out;
}

// Training-mode dropout with the mask pinned by reseeding before every forward.
inline std::vector<GradCheck> dropout(int seed) {
  Rng rng(static_cast<std::uint64_t>(800 + seed));
  ad::Dropout d(0.3, 1);
  d.set_training(true);
  const std::uint64_t mask_seed = 5000 + static_cast<std::uint64_t>(seed);
  d.reseed(mask_seed);
  return check_layer(d, random_tensor({3, 8}, rng), rng, [&](const ad::Tensor& in) {
    d.reseed(mask_seed);
    return d.forward(in);
  });
}

inline std::vector<GradCheck> all_layers(int seed) {
  std::vector<GradCheck> out;
  for (auto* f : {&linear, &conv1d, &relu, &layer_norm, &softmax, &sigmoid, &embedding, &attention, &dropout}) {
    auto part = f(seed);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace grad

inline PolicyConfig no_dropout() {
  PolicyConfig cfg;
  cfg.dropout = 0.0;
  return cfg;
}

// Two samples: one with three aged memory rows, one with none.
inline PolicyInput two_sample_batch(Rng& rng, bool nav) {
  const Observation o1 = random_obs(rng), o2 = random_obs(rng), g1 = random_obs(rng), g2 = random_obs(rng);
  const Observation* obs[] = {&o1, &o2};
  const Observation* goals[] = {&g1, &g2};
  PolicyInput in;
  in.obs = stack_observations(obs);
  if (nav) in.goal = stack_observations(goals);
  in.memory = random_rows(rng, 3, 0.5);
  in.buckets = {0, 5, 31};
  in.offsets = {0, 3, 3};
  return in;
}

// log pi(a|s) + 0.5 V(s), summed over the batch with fixed actions.
inline double policy_objective(const PolicyBatchOutput& out, const std::vector<std::size_t>& actions) {
  double s = 0.0;
  for (std::size_t b = 0; b < actions.size(); ++b) s += log_softmax(out.logits.row(b), actions[b]) + 0.5 * out.values[b];
  return s;
}

// Up to 6 coordinates per parameter tensor of the head's trainable set. A missing gradient
// is reported as an infinite error.
inline std::vector<GradCheck> full_network(HeadKind kind, std::uint64_t seed) {
  Rng rng(seed);
  PolicyNet net(kDefaultRays, seed, no_dropout());
  const PolicyInput in = two_sample_batch(rng, kind == HeadKind::kNavigate);
  const std::vector<std::size_t> actions = {rng.below(3), rng.below(3)};

  auto params = net.trainable(kind);
  for (auto* p : params) p->zero_grad();
  const PolicyBatchOutput out = net.forward(kind, in);
  ad::Tensor dlogits(out.logits.shape), dvalues(out.values.shape);
  for (std::size_t b = 0; b < actions.size(); ++b) {
    const auto p = action_probabilities(out.logits.row(b));
    for (std::size_t a = 0; a < 3; ++a) dlogits[b * 3 + a] = (a == actions[b] ? 1.0 : 0.0) - p[a];
    dvalues[b] = 0.5;
  }
  net.backward(dlogits, dvalues);

  std::vector<GradCheck> result;
  for (ad::Parameter* p : params) {
    if (!p->grad_populated) {
      result.push_back({p->name + " (no gradient)", std::numeric_limits<double>::infinity()});
      continue;
    }
    std::vector<std::size_t> coords;
    const std::size_t n = p->value.size();
    if (p->name.find(".age.") != std::string::npos) {
      for (std::size_t b : in.buckets) coords.push_back(b * ReachabilityModel::kEmbedDim + rng.below(ReachabilityModel::kEmbedDim));
      // buckets are distinct, so these coordinates are too
      coords.push_back(7 * ReachabilityModel::kEmbedDim);  // unused bucket: zero gradient
    } else if (n <= 6) {
      for (std::size_t k = 0; k < n; ++k) coords.push_back(k);
    } else {
      while (coords.size() < 6) {
        const std::size_t c = rng.below(n);
        if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
      }
    }
    std::vector<double> values, analytic;
    for (auto c : coords) {
      values.push_back(p->value[c]);
      analytic.push_back(p->value.grad[c]);
    }
    std::vector<double> probe = values;
    const auto numeric = numeric_gradient(probe, [&] {
      for (std::size_t i = 0; i < coords.size(); ++i) p->value[coords[i]] = probe[i];
      const double v = policy_objective(net.infer(kind, in), actions);
      for (std::size_t i = 0; i < coords.size(); ++i) p->value[coords[i]] = values[i];
      return v;
    });
    result.push_back({p->name, max_relative_error(analytic, numeric)});
  }
  return result;
}

inline double worst(const std::vector<GradCheck>& checks) {
  double w = 0.0;
  for (const auto& c : checks) {
    if (std::isnan(c.error)) return std::numeric_limits<double>::infinity();
    w = std::max(w, c.error);
  }
  return w;
}

}  // namespace memnav::testing
