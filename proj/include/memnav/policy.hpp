#pragma once

// Actor-critic over the scene memory: a shared observation CNN and one
// Transformer block per head kind (exploration, navigation).
//
//   c = CNN(x)                      (navigation: c = Q [CNN(x), CNN(goal)])
//   e = LN1(Att(c, M) + c)
//   h = LN2(MLP(e) + e)
//   logits = P h,  value = V h

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "memnav/autodiff.hpp"
#include "memnav/env.hpp"
#include "memnav/memory.hpp"
#include "memnav/observation_store.hpp"
#include "memnav/reachability.hpp"

namespace memnav {

enum class HeadKind { kExplore, kNavigate };

inline const char* head_name(HeadKind k) { return k == HeadKind::kExplore ? "explore" : "navigate"; }

struct PolicyConfig {
  std::size_t dim = 64;
  std::size_t memory_dim = ReachabilityModel::kEmbedDim;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 128;
  int max_age = 1000;
  double dropout = 0.1;  // on h_t, updates only
};

// A batch of B decision points. Memory rows of sample b are rows [offsets[b], offsets[b+1]).
struct PolicyInput {
  ad::Tensor obs;                     // [B,3,W]; may be left empty when obs_features is set
  ad::Tensor goal;                    // [B,3,W]; navigation only
  ad::Tensor obs_features;            // optional precomputed CNN(obs), [B,dim]
  ad::Tensor goal_features;           // optional precomputed CNN(goal), [B,dim]
  ad::Tensor memory;                  // [R, memory_dim]
  std::vector<std::size_t> buckets;   // [R] age buckets; empty means rows are already aged
  std::vector<std::size_t> offsets{0};

  std::size_t batch() const { return offsets.size() - 1; }
};

struct PolicyBatchOutput {
  ad::Tensor logits;  // [B,3]
  ad::Tensor values;  // [B,1]
  ad::Tensor h;       // [B,dim]
};

struct PolicyOutput {
  std::array<double, kNumActions> logits{};
  double value = 0.0;
  std::vector<double> h;
};

class PolicyNet {
 public:
  PolicyNet(int rays = kDefaultRays, std::uint64_t seed = 0, PolicyConfig cfg = {})
      : cfg_(cfg), rays_(rays) {
    Rng rng(seed);
    auto specs = conv_ladder();
    specs.push_back(ad::LayerSpec::linear(conv_ladder_features(rays), cfg.dim));
    cnn_ = ad::Sequential("policy.cnn", specs, rng);
    explore_ = std::make_unique<Head>("policy.explore", cfg, false, rng);
    navigate_ = std::make_unique<Head>("policy.navigate", cfg, true, rng);
  }

  const PolicyConfig& config() const { return cfg_; }
  int rays() const { return rays_; }

  void set_cnn_trainable(bool on) { cnn_trainable_ = on; }
  bool cnn_trainable() const { return cnn_trainable_; }

  const AgeEmbeddingTable& ages(HeadKind k) const { return head(k).ages; }
  AgeEmbeddingTable& ages(HeadKind k) { return head(k).ages; }

  // CNN(x) for a stack of observations [B,3,W] -> [B,dim].
  ad::Tensor features(const ad::Tensor& obs) const { return cnn_.infer(obs); }

  ad::ParameterList parameters() {
    ad::ParameterList out;
    cnn_.collect(out);
    explore_->collect(out);
    navigate_->collect(out);
    return out;
  }

  // Parameters updated when training one head; the CNN is included only while trainable.
  ad::ParameterList trainable(HeadKind k) {
    ad::ParameterList out;
    if (cnn_trainable_) cnn_.collect(out);
    head(k).collect(out);
    return out;
  }

  PolicyBatchOutput infer(HeadKind k, const PolicyInput& in) const { return run(k, in, nullptr); }

  // Training pass; keeps what backward needs. Dropout is active when the config asks for it.
  PolicyBatchOutput forward(HeadKind k, const PolicyInput& in) {
    tape_ = std::make_unique<Tape>();
    tape_->kind = k;
    return run(k, in, tape_.get());
  }

  void backward(const ad::Tensor& dlogits, const ad::Tensor& dvalues) {
    if (!tape_) throw NoForwardPass("policy: backward without forward");
    auto tape = std::move(tape_);
    Head& hd = head(tape->kind);
    ad::Tensor dh = hd.pi.backward(dlogits);
    const ad::Tensor dhv = hd.v.backward(dvalues);
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dhv[i];
    dh = hd.drop.backward(dh);
    ad::Tensor de = hd.ln2.backward(dh);
    const ad::Tensor dmlp = hd.mlp.backward(de);
    for (std::size_t i = 0; i < de.size(); ++i) de[i] += dmlp[i];
    ad::Tensor dsum = hd.ln1.backward(de);
    auto att = hd.att.backward(dsum);
    ad::Tensor dc = dsum;
    for (std::size_t i = 0; i < dc.size(); ++i) dc[i] += att.query[i];

    // Memory gradient back to the age table, undoing the canonical row order.
    hd.ages.table().touch();
    if (!tape->buckets.empty()) {
      const std::size_t D = cfg_.memory_dim;
      for (std::size_t r = 0; r < tape->order.size(); ++r) {
        hd.ages.table().accumulate(tape->buckets[tape->order[r]],
                                   std::span<const double>(att.memory.values.data() + r * D, D));
      }
    }

    ad::Tensor dfeat = dc;
    if (hd.query) dfeat = hd.query->backward(dc);  // [B, 2*dim]
    if (tape->cnn_ran) {
      const std::size_t B = dc.dim(0), d = cfg_.dim;
      if (hd.query) {
        ad::Tensor stacked({2 * B, d});
        for (std::size_t b = 0; b < B; ++b) {
          std::copy_n(dfeat.data() + b * 2 * d, d, stacked.data() + b * d);
          std::copy_n(dfeat.data() + b * 2 * d + d, d, stacked.data() + (B + b) * d);
        }
        cnn_.backward(stacked);
      } else {
        cnn_.backward(dfeat);
      }
    }
  }

  void save(const std::string& path) { ad::save_checkpoint(path, ad::const_params(parameters())); }
  void load(const std::string& path) { ad::restore_parameters(ad::read_checkpoint(path), parameters()); }

  void set_dropout(double p) {
    explore_->drop.set_rate(p);
    navigate_->drop.set_rate(p);
    cfg_.dropout = p;
  }

  void reseed_dropout(std::uint64_t seed) {
    explore_->drop.reseed(seed);
    navigate_->drop.reseed(Rng::mix(seed));
  }

 private:
  struct Head {
    Head(const std::string& name, const PolicyConfig& cfg, bool nav, Rng& rng)
        : att(name + ".att", cfg.dim, cfg.memory_dim, cfg.heads, rng),
          ln1(name + ".ln1", cfg.dim),
          mlp(name + ".mlp",
              {ad::LayerSpec::linear(cfg.dim, cfg.mlp_hidden), ad::LayerSpec::relu(),
               ad::LayerSpec::linear(cfg.mlp_hidden, cfg.dim)},
              rng),
          ln2(name + ".ln2", cfg.dim),
          drop(cfg.dropout, rng.next()),
          pi(name + ".pi", cfg.dim, kNumActions, rng),
          v(name + ".v", cfg.dim, 1, rng),
          ages(name + ".age", cfg.memory_dim, cfg.max_age, rng) {
      if (nav) query = std::make_unique<ad::Linear>(name + ".query", 2 * cfg.dim, cfg.dim, rng);
    }
    void collect(ad::ParameterList& out) {
      if (query) query->collect(out);
      att.collect(out);
      ln1.collect(out);
      mlp.collect(out);
      ln2.collect(out);
      pi.collect(out);
      v.collect(out);
      out.push_back(&ages.table().table());
    }
    std::unique_ptr<ad::Linear> query;
    ad::MultiHeadAttention att;
    ad::LayerNorm ln1;
    ad::Sequential mlp;
    ad::LayerNorm ln2;
    ad::Dropout drop;
    ad::Linear pi, v;
    AgeEmbeddingTable ages;
  };

  struct Tape {
    HeadKind kind = HeadKind::kExplore;
    bool cnn_ran = false;
    std::vector<std::size_t> buckets;
    std::vector<std::size_t> order;  // sorted position -> original row
  };

  Head& head(HeadKind k) { return k == HeadKind::kExplore ? *explore_ : *navigate_; }
  const Head& head(HeadKind k) const { return k == HeadKind::kExplore ? *explore_ : *navigate_; }

  // The const_casts below are only reached with a tape, i.e. from the non-const forward().
  PolicyBatchOutput run(HeadKind k, const PolicyInput& in, Tape* tape) const {
    const Head& hd = head(k);
    Head& mhd = const_cast<Head&>(hd);
    const bool nav = k == HeadKind::kNavigate;
    const std::size_t B = in.batch(), d = cfg_.dim;

    // Query features.
    ad::Tensor c;
    const bool have_feats = in.obs_features.size() > 0 && (!nav || in.goal_features.size() > 0);
    ad::Tensor feats;  // [B,d] or [2B,d]
    if (have_feats) {
      feats = in.obs_features;
      if (nav) {
        feats = ad::Tensor({2 * B, d});
        std::copy(in.obs_features.values.begin(), in.obs_features.values.end(), feats.values.begin());
        std::copy(in.goal_features.values.begin(), in.goal_features.values.end(), feats.values.begin() + B * d);
      }
    } else {
      ad::Tensor x = in.obs;
      if (x.rank() != 3 || x.dim(0) != B || static_cast<int>(x.dim(2)) != rays_) {
        throw ShapeMismatch("policy: observation batch " + ad::shape_str(x.shape));
      }
      if (nav) {
        if (in.goal.shape != in.obs.shape) throw ShapeMismatch("policy: goal batch " + ad::shape_str(in.goal.shape));
        x = ad::Tensor({2 * B, 3, in.obs.dim(2)});
        std::copy(in.obs.values.begin(), in.obs.values.end(), x.values.begin());
        std::copy(in.goal.values.begin(), in.goal.values.end(), x.values.begin() + static_cast<long>(in.obs.size()));
      }
      if (tape && cnn_trainable_) {
        feats = const_cast<ad::Sequential&>(cnn_).forward(x);
        tape->cnn_ran = true;
      } else {
        feats = cnn_.infer(x);
      }
    }
    if (feats.shape != ad::Shape{nav ? 2 * B : B, d}) throw ShapeMismatch("policy: feature batch " + ad::shape_str(feats.shape));
    if (nav) {
      ad::Tensor cat({B, 2 * d});
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(feats.data() + b * d, d, cat.data() + b * 2 * d);
        std::copy_n(feats.data() + (B + b) * d, d, cat.data() + b * 2 * d + d);
      }
      c = tape ? mhd.query->forward(cat) : hd.query->infer(cat);
    } else {
      c = std::move(feats);
    }

    // Aged, canonically ordered memory.
    ad::PackedRows mem = canonical_memory(hd, in, tape);

    ad::Tensor a = tape ? mhd.att.forward(c, mem) : hd.att.infer(c, mem);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += c[i];
    ad::Tensor e = tape ? mhd.ln1.forward(a) : hd.ln1.infer(a);
    ad::Tensor m = tape ? mhd.mlp.forward(e) : hd.mlp.infer(e);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += e[i];
    PolicyBatchOutput out;
    out.h = tape ? mhd.ln2.forward(m) : hd.ln2.infer(m);
    ad::Tensor hd_in = out.h;
    if (tape) {
      mhd.drop.set_training(true);
      hd_in = mhd.drop.forward(out.h);
      mhd.drop.set_training(false);
    }
    out.logits = tape ? mhd.pi.forward(hd_in) : hd.pi.infer(hd_in);
    out.values = tape ? mhd.v.forward(hd_in) : hd.v.infer(hd_in);
    return out;
  }

  ad::PackedRows canonical_memory(const Head& hd, const PolicyInput& in, Tape* tape) const {
    const std::size_t D = cfg_.memory_dim;
    const std::size_t R = in.offsets.back();
    if (in.offsets.front() != 0 || (R > 0 && in.memory.shape != ad::Shape{R, D})) {
      throw ShapeMismatch("policy: memory rows " + ad::shape_str(in.memory.shape));
    }
    if (!in.buckets.empty() && in.buckets.size() != R) throw ShapeMismatch("policy: one age bucket per memory row");
    std::vector<double> aged(R * D);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t i = 0; i < D; ++i) aged[r * D + i] = in.memory[r * D + i];
      if (!in.buckets.empty()) {
        const auto vec = hd.ages.table().row(in.buckets[r]);
        for (std::size_t i = 0; i < D; ++i) aged[r * D + i] += vec[i];
      }
    }
    std::vector<std::size_t> order(R);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t b = 0; b < in.batch(); ++b) {
      std::sort(order.begin() + static_cast<long>(in.offsets[b]), order.begin() + static_cast<long>(in.offsets[b + 1]),
                [&](std::size_t x, std::size_t y) {
                  return std::lexicographical_compare(aged.begin() + static_cast<long>(x * D), aged.begin() + static_cast<long>((x + 1) * D),
                                                      aged.begin() + static_cast<long>(y * D), aged.begin() + static_cast<long>((y + 1) * D));
                });
    }
    ad::PackedRows mem;
    mem.rows = ad::Tensor({R, D});
    for (std::size_t r = 0; r < R; ++r) std::copy_n(aged.data() + order[r] * D, D, mem.rows.data() + r * D);
    mem.offsets = in.offsets;
    if (tape) {
      tape->buckets = in.buckets;
      tape->order = std::move(order);
    }
    return mem;
  }

  PolicyConfig cfg_;
  int rays_;
  bool cnn_trainable_ = true;
  ad::Sequential cnn_;
  std::unique_ptr<Head> explore_, navigate_;
  std::unique_ptr<Tape> tape_;
};

// Memory rows of a buffer at step t, ready for a PolicyInput.
inline void append_memory(PolicyInput& in, const MemoryBuffer& buf, const AgeEmbeddingTable& ages, int t) {
  const std::size_t D = ages.dim();
  const std::size_t R0 = in.offsets.back();
  ad::Tensor rows({R0 + buf.size(), D});
  std::copy(in.memory.values.begin(), in.memory.values.end(), rows.values.begin());
  for (std::size_t j = 0; j < buf.size(); ++j) {
    if (buf[j].embedding.size() != D) throw ShapeMismatch("policy: memory entry dim");
    std::copy(buf[j].embedding.begin(), buf[j].embedding.end(), rows.data() + (R0 + j) * D);
    in.buckets.push_back(ages.bucket(t - buf[j].insert_step));
  }
  in.memory = std::move(rows);
  in.offsets.push_back(R0 + buf.size());
}

namespace detail {

inline PolicyOutput single_output(const PolicyBatchOutput& o) {
  PolicyOutput out;
  for (int a = 0; a < kNumActions; ++a) out.logits[static_cast<std::size_t>(a)] = o.logits[static_cast<std::size_t>(a)];
  out.value = o.values[0];
  out.h.assign(o.h.values.begin(), o.h.values.end());
  return out;
}

inline PolicyInput single_input(const Observation& obs, const ad::Tensor& mem) {
  PolicyInput in;
  in.obs = stack_observations(obs);
  const std::size_t R = mem.rank() == 2 ? mem.dim(0) : 0;
  if (R > 0) in.memory = mem;
  in.offsets = {0, R};
  return in;
}

}  // namespace detail

// mem: already-aged rows [J, memory_dim] (possibly empty).
inline PolicyOutput explore_forward(const PolicyNet& net, const Observation& obs, const ad::Tensor& mem) {
  return detail::single_output(net.infer(HeadKind::kExplore, detail::single_input(obs, mem)));
}

inline PolicyOutput navigate_forward(const PolicyNet& net, const Observation& obs, const Observation& goal,
                                     const ad::Tensor& mem) {
  PolicyInput in = detail::single_input(obs, mem);
  in.goal = stack_observations(goal);
  return detail::single_output(net.infer(HeadKind::kNavigate, in));
}

struct ActionSample {
  Action action = Action::kForward;
  double log_prob = 0.0;
  double entropy = 0.0;
};

// Softmax probabilities; -inf logits get probability 0. NaN, +inf or all -inf are rejected.
inline std::array<double, kNumActions> action_probabilities(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (std::isnan(z) || z == std::numeric_limits<double>::infinity()) throw NonFiniteLogits("policy logits contain NaN/+inf");
    mx = std::max(mx, z);
  }
  if (!std::isfinite(mx)) throw NonFiniteLogits("policy logits are all -inf");
  std::array<double, kNumActions> p{};
  double sum = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) sum += (p[a] = std::exp(logits[a] - mx));
  for (double& v : p) v /= sum;
  return p;
}

inline double log_softmax(std::span<const double> logits, std::size_t a) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  return logits[a] - mx - std::log(sum);
}

inline double entropy_of(const std::array<double, kNumActions>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline ActionSample sample_action(std::span<const double> logits, Rng& rng) {
  const auto p = action_probabilities(logits);
  const double u = rng.uniform();
  std::size_t a = 0;
  double acc = p[0];
  while (a + 1 < p.size() && u >= acc) acc += p[++a];
  while (p[a] == 0.0) --a;  // rounding can carry u past the last nonzero bin
  return {static_cast<Action>(a), log_softmax(logits, a), entropy_of(p)};
}

inline ActionSample sample_action(const PolicyOutput& out, Rng& rng) { return sample_action(out.logits, rng); }

}  // namespace memnav
