#pragma once

// PPO with GAE advantages and an RMSprop optimizer.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "memnav/autodiff.hpp"
#include "memnav/error.hpp"
#include "memnav/policy.hpp"
#include "memnav/rl/rollout.hpp"
#include "memnav/rng.hpp"

namespace memnav {

struct PPOConfig {
  int batches = 100;
  int episodes_per_batch = 8;
  int steps_explore = 200;  // exploration steps per episode (stage 2, and stage 3's first phase)
  int steps_nav = 200;      // navigation steps per episode (stage 3)
  int ppo_epochs = 4;
  int minibatches = 4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.1;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double learning_rate = 3e-4;
  int warmup_steps = 300;  // optimizer steps of linear ramp from 0
  double max_grad_norm = 0.5;
  double rms_alpha = 0.98;
  double rms_epsilon = 1e-5;
  double weight_decay = 1e-7;
  double dropout = 0.0;
  bool train_cnn = false;  // stage 3 only; stage 2 always trains the CNN
  int workers = 1;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("ppo: gamma must lie in (0,1]");
    if (!(clip > 0.0)) throw ConfigError("ppo: clip must be > 0");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo: gae_lambda must lie in [0,1]");
    if (batches < 0 || episodes_per_batch < 1 || ppo_epochs < 1 || minibatches < 1 || workers < 1) {
      throw ConfigError("ppo: counts must be positive");
    }
    if (steps_explore < 1 || steps_nav < 1) throw ConfigError("ppo: episode lengths must be positive");
    if (!(learning_rate >= 0.0) || warmup_steps < 0) throw ConfigError("ppo: bad learning rate schedule");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("ppo: dropout must lie in [0,1)");
  }
};

// Generalized advantage estimates for one episode; the value after the last step is taken as 0.
inline void compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda,
                        std::span<double> advantages, std::span<double> returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n || advantages.size() != n || returns.size() != n) throw ShapeMismatch("gae: length mismatch");
  double next_value = 0.0, acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double delta = rewards[i] + gamma * next_value - values[i];
    acc = delta + gamma * lambda * acc;
    advantages[i] = acc;
    returns[i] = acc + values[i];
    next_value = values[i];
  }
}

// Per-sample clipped surrogate, min(rho*A, clip(rho)*A).
inline double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

// True when the clipped branch is active, so the surrogate has no gradient.
inline bool surrogate_clipped(double ratio, double advantage, double clip) {
  return (advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip);
}

struct SampleLoss {
  double policy = 0.0;   // -min(rho*A, clip(rho)*A)
  double entropy = 0.0;  // H(pi(.|z))
  double ratio = 1.0;
};

// Loss of one sample, policy - entropy_coef * H, and its gradient with respect to the logits.
inline SampleLoss ppo_sample_loss(std::span<const double> z, std::size_t action, double old_log_prob, double advantage,
                                  double clip, double entropy_coef, std::span<double> dz) {
  const auto p = action_probabilities(z);
  SampleLoss out;
  out.ratio = std::exp(log_softmax(z, action) - old_log_prob);
  out.policy = -clipped_surrogate(out.ratio, advantage, clip);
  out.entropy = entropy_of(p);
  const bool clipped = surrogate_clipped(out.ratio, advantage, clip);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double onehot = i == action ? 1.0 : 0.0;
    double g = clipped ? 0.0 : -advantage * out.ratio * (onehot - p[i]);
    const double logp_i = p[i] > 0.0 ? std::log(p[i]) : 0.0;
    g += entropy_coef * p[i] * (logp_i + out.entropy);
    dz[i] = g;
  }
  return out;
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  std::size_t samples = 0;
};

class PPOTrainer {
 public:
  PPOTrainer(PolicyNet& net, HeadKind head, PPOConfig cfg, std::uint64_t seed)
      : net_(net), head_(head), cfg_(cfg), rng_(seed) {
    cfg_.validate();
    net_.set_dropout(cfg_.dropout);
    net_.reseed_dropout(Rng::mix(seed ^ 0xd0d0));
    net_.set_cnn_trainable(cfg_.train_cnn);
    ad::OptimizerConfig oc;
    oc.kind = ad::OptimizerKind::kRmsprop;
    oc.learning_rate = 0.0;
    oc.alpha = cfg_.rms_alpha;
    oc.epsilon = cfg_.rms_epsilon;
    oc.weight_decay = cfg_.weight_decay;
    opt_ = std::make_unique<ad::Optimizer>(oc, net_.trainable(head));
  }

  const PPOConfig& config() const { return cfg_; }
  int steps_taken() const { return steps_; }

  double learning_rate_at(int step) const {
    if (cfg_.warmup_steps <= 0) return cfg_.learning_rate;
    return cfg_.learning_rate * std::min(1.0, static_cast<double>(step + 1) / cfg_.warmup_steps);
  }

  UpdateStats update(const std::vector<EpisodeTrace>& traces) {
    std::vector<Sample> samples;
    for (std::size_t e = 0; e < traces.size(); ++e) {
      const auto& tr = traces[e];
      const std::size_t n = tr.steps.size();
      std::vector<double> r(n), v(n), adv(n), ret(n);
      for (std::size_t i = 0; i < n; ++i) {
        r[i] = tr.steps[i].reward;
        v[i] = tr.steps[i].value;
      }
      compute_gae(r, v, cfg_.gamma, cfg_.gae_lambda, adv, ret);
      for (std::size_t i = 0; i < n; ++i) samples.push_back({e, i, adv[i], ret[i]});
    }
    UpdateStats stats;
    if (samples.empty()) return stats;

    double mean = 0.0, var = 0.0;
    for (const auto& s : samples) mean += s.advantage;
    mean /= static_cast<double>(samples.size());
    for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean);
    const double sd = std::sqrt(var / static_cast<double>(samples.size()));
    for (auto& s : samples) s.advantage = (s.advantage - mean) / (sd + 1e-8);

    std::vector<ad::Tensor> cached;
    if (!net_.cnn_trainable()) cached = feature_tables(traces);

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t mbs = std::max<std::size_t>(1, static_cast<std::size_t>(cfg_.minibatches));
    std::size_t counted = 0, updates = 0;
    for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
      rng_.shuffle(order);
      for (std::size_t m = 0; m < mbs; ++m) {
        const std::size_t lo = order.size() * m / mbs, hi = order.size() * (m + 1) / mbs;
        if (lo == hi) continue;
        std::vector<const Sample*> mb;
        for (std::size_t i = lo; i < hi; ++i) mb.push_back(&samples[order[i]]);
        const MinibatchStats ms = minibatch_step(traces, cached, mb);
        stats.policy_loss += ms.policy_loss;
        stats.value_loss += ms.value_loss;
        stats.entropy += ms.entropy;
        stats.clip_fraction += ms.clipped;
        stats.grad_norm += ms.grad_norm;
        counted += mb.size();
        ++updates;
      }
    }
    stats.policy_loss /= static_cast<double>(counted);
    stats.value_loss /= static_cast<double>(counted);
    stats.entropy /= static_cast<double>(counted);
    stats.clip_fraction /= static_cast<double>(counted);
    stats.grad_norm /= static_cast<double>(updates);
    stats.samples = samples.size();
    return stats;
  }

 private:
  struct Sample {
    std::size_t episode, step;
    double advantage, ret;
  };
  struct MinibatchStats {
    double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, clipped = 0.0, grad_norm = 0.0;
  };

  // CNN(view) per episode view, [V, dim].
  std::vector<ad::Tensor> feature_tables(const std::vector<EpisodeTrace>& traces) const {
    std::vector<ad::Tensor> out;
    for (const auto& tr : traces) {
      std::vector<const Observation*> views;
      for (const auto& v : tr.views) views.push_back(&v);
      out.push_back(net_.features(stack_observations(views)));
    }
    return out;
  }

  MinibatchStats minibatch_step(const std::vector<EpisodeTrace>& traces, const std::vector<ad::Tensor>& cached,
                                const std::vector<const Sample*>& mb) {
    const std::size_t B = mb.size(), d = net_.config().dim;
    const bool nav = head_ == HeadKind::kNavigate;
    PolicyInput in;
    if (!cached.empty()) {
      in.obs_features = ad::Tensor({B, d});
      if (nav) in.goal_features = ad::Tensor({B, d});
    } else {
      std::vector<const Observation*> obs, goals;
      for (const Sample* s : mb) {
        const auto& tr = traces[s->episode];
        const auto& st = tr.steps[s->step];
        obs.push_back(&tr.view_at(st.event));
        if (nav) goals.push_back(&tr.views.at(static_cast<std::size_t>(st.goal_view)));
      }
      in.obs = stack_observations(obs);
      if (nav) in.goal = stack_observations(goals);
    }
    std::size_t rows = 0;
    for (const Sample* s : mb) rows += traces[s->episode].steps[s->step].memory_count;
    const std::size_t D = net_.config().memory_dim;
    in.memory = ad::Tensor({rows, D});
    in.buckets.reserve(rows);
    const AgeEmbeddingTable& ages = net_.ages(head_);
    std::size_t r = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& tr = traces[mb[b]->episode];
      const auto& st = tr.steps[mb[b]->step];
      if (!cached.empty()) {
        const auto view = static_cast<std::size_t>(tr.observed[static_cast<std::size_t>(st.event)].view);
        std::copy_n(cached[mb[b]->episode].data() + view * d, d, in.obs_features.data() + b * d);
        if (nav) std::copy_n(cached[mb[b]->episode].data() + static_cast<std::size_t>(st.goal_view) * d, d, in.goal_features.data() + b * d);
      }
      const MemoryBuffer& buf = tr.memory.buffer();
      for (std::size_t j = 0; j < st.memory_count; ++j, ++r) {
        std::copy(buf[j].embedding.begin(), buf[j].embedding.end(), in.memory.data() + r * D);
        in.buckets.push_back(ages.bucket(st.t - buf[j].insert_step));
      }
      in.offsets.push_back(r);
    }

    const PolicyBatchOutput out = net_.forward(head_, in);
    ad::Tensor dlogits({B, static_cast<std::size_t>(kNumActions)}), dvalues({B, 1});
    MinibatchStats ms;
    const double inv = 1.0 / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      const Sample& s = *mb[b];
      const TraceStep& st = traces[s.episode].steps[s.step];
      const std::span<const double> z(out.logits.data() + b * kNumActions, kNumActions);
      const double A = s.advantage;
      const double V = out.values[b];
      std::array<double, kNumActions> dz{};
      const SampleLoss sl = ppo_sample_loss(z, static_cast<std::size_t>(st.action), st.log_prob, A, cfg_.clip,
                                            cfg_.entropy_coef, dz);
      const double value_term = (V - s.ret) * (V - s.ret);
      if (!std::isfinite(sl.policy) || !std::isfinite(value_term) || !std::isfinite(sl.entropy)) {
        std::ostringstream msg;
        msg << "ppo: non-finite loss (ratio " << sl.ratio << ", advantage " << A << ", value " << V << ", return "
            << s.ret << ", entropy " << sl.entropy << ")";
        throw NonFiniteLoss(msg.str());
      }
      ms.policy_loss += sl.policy;
      ms.value_loss += value_term;
      ms.entropy += sl.entropy;
      if (std::abs(sl.ratio - 1.0) > cfg_.clip) ms.clipped += 1.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(kNumActions); ++i) dlogits[b * kNumActions + i] = dz[i] * inv;
      dvalues[b] = 2.0 * cfg_.value_coef * (V - s.ret) * inv;
    }
    net_.backward(dlogits, dvalues);
    ms.grad_norm = opt_->clip_grad_norm(cfg_.max_grad_norm);
    opt_->set_learning_rate(learning_rate_at(steps_));
    opt_->step();
    ++steps_;
    return ms;
  }

  PolicyNet& net_;
  HeadKind head_;
  PPOConfig cfg_;
  Rng rng_;
  std::unique_ptr<ad::Optimizer> opt_;
  int steps_ = 0;
};

}  // namespace memnav
