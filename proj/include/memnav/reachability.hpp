#pragma once

// Reachability network: random-walk data collection, temporally labeled
// pairs, and the siamese model R(a, b) = sigmoid(f(g(a), g(b))).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "memnav/autodiff.hpp"
#include "memnav/env.hpp"
#include "memnav/error.hpp"
#include "memnav/observation_store.hpp"
#include "memnav/rng.hpp"

namespace memnav {

struct PairingConfig {
  int walk_steps = 1000;      // T
  int walks = 40;
  int pairs_per_walk = 500;
  int positive_radius = 5;    // k
  int negative_margin = 25;

  void validate() const {
    if (walk_steps < 1 || walks < 1) throw ConfigError("pairing: walk_steps and walks must be positive");
    if (positive_radius < 1) throw ConfigError("pairing: positive_radius must be >= 1");
    if (negative_margin < positive_radius) throw ConfigError("pairing: negative_margin must be >= positive_radius");
    if (pairs_per_walk < 0) throw ConfigError("pairing: pairs_per_walk must be >= 0");
  }
};

struct Walk {
  std::vector<Observation> observations;
  std::vector<Pose> poses;
  std::size_t size() const { return observations.size(); }
};

struct LabeledPair {
  Observation obs_a;
  Observation obs_b;
  int label = 0;
  std::uint32_t walk = 0;
  long index_a = -1;  // step indices inside the walk; not persisted
  long index_b = -1;
};

// Smallest step gap sampled for a negative; |i-j| = k is still positive.
inline int min_negative_gap(const PairingConfig& cfg) { return std::max(cfg.negative_margin, cfg.positive_radius + 1); }

// Conv ladder shared by g and the policy CNN: 9/7/5 kernels with strides 5/4/3.
inline std::vector<ad::LayerSpec> conv_ladder() {
  using ad::LayerSpec;
  return {LayerSpec::conv1d(3, 32, 9, 5, 4),   LayerSpec::relu(), LayerSpec::conv1d(32, 64, 7, 4, 3),
          LayerSpec::relu(), LayerSpec::conv1d(64, 128, 5, 3, 2), LayerSpec::relu()};
}

inline std::size_t conv_ladder_features(int rays) {
  auto out = [](std::size_t len, std::size_t k, std::size_t s, std::size_t p) { return (len + 2 * p - k) / s + 1; };
  std::size_t len = out(static_cast<std::size_t>(rays), 9, 5, 4);
  len = out(len, 7, 4, 3);
  len = out(len, 5, 3, 2);
  return 128 * len;
}

inline std::vector<Walk> collect_walks(const MazeMap& map, const PairingConfig& cfg, std::uint64_t seed,
                                       int rays = kDefaultRays) {
  cfg.validate();
  Renderer renderer(rays);
  std::vector<Walk> walks(static_cast<std::size_t>(cfg.walks));
  for (int w = 0; w < cfg.walks; ++w) {
    Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(w));
    Walk& walk = walks[static_cast<std::size_t>(w)];
    Pose pose = map.start();
    for (int t = 0; t < cfg.walk_steps; ++t) {
      if (t > 0) pose = step(map, pose, static_cast<Action>(rng.below(kNumActions)));
      walk.poses.push_back(pose);
      walk.observations.push_back(renderer.render(map, pose));
    }
  }
  return walks;
}

inline int pair_label(long i, long j, long k) { return std::abs(i - j) <= k ? 1 : 0; }

// Labels alternate positive/negative over the whole request, so an even total is exactly balanced.
inline std::vector<LabeledPair> sample_pairs(const std::vector<Walk>& walks, const PairingConfig& cfg,
                                             std::uint64_t seed) {
  cfg.validate();
  if (walks.empty()) throw InsufficientWalkLength("sample_pairs: no walks");
  for (const Walk& w : walks) {
    if (static_cast<int>(w.size()) < min_negative_gap(cfg) + 1) {
      throw InsufficientWalkLength("walk of " + std::to_string(w.size()) + " steps is shorter than negative gap + 1 = " +
                                   std::to_string(min_negative_gap(cfg) + 1));
    }
  }
  std::vector<LabeledPair> pairs;
  pairs.reserve(walks.size() * static_cast<std::size_t>(cfg.pairs_per_walk));
  std::size_t n = 0;
  for (std::size_t w = 0; w < walks.size(); ++w) {
    Rng rng = Rng(seed).fork(w);
    const long T = static_cast<long>(walks[w].size());
    const long gap = min_negative_gap(cfg);
    for (int m = 0; m < cfg.pairs_per_walk; ++m, ++n) {
      long i, j;
      if (n % 2 == 0) {
        i = static_cast<long>(rng.below(static_cast<std::uint64_t>(T)));
        do {
          const long d = static_cast<long>(rng.below(static_cast<std::uint64_t>(cfg.positive_radius) + 1));
          j = rng.below(2) ? i + d : i - d;
        } while (j < 0 || j >= T);
      } else {
        const long d = gap + static_cast<long>(rng.below(static_cast<std::uint64_t>(T - gap)));
        i = static_cast<long>(rng.below(static_cast<std::uint64_t>(T - d)));
        j = i + d;
        if (rng.below(2)) std::swap(i, j);
      }
      pairs.push_back({walks[w].observations[static_cast<std::size_t>(i)],
                       walks[w].observations[static_cast<std::size_t>(j)], pair_label(i, j, cfg.positive_radius),
                       static_cast<std::uint32_t>(w), i, j});
    }
  }
  return pairs;
}

class ReachabilityModel {
 public:
  static constexpr std::size_t kEmbedDim = 128;
  static constexpr std::size_t kHidden = 512;

  explicit ReachabilityModel(int rays = kDefaultRays, std::uint64_t seed = 0) : rays_(rays) {
    Rng rng(seed);
    auto g_specs = conv_ladder();
    g_specs.push_back(ad::LayerSpec::linear(conv_ladder_features(rays), kEmbedDim));
    g_ = ad::Sequential("reach.g", g_specs, rng);
    f_ = ad::Sequential("reach.f",
                        {ad::LayerSpec::linear(2 * kEmbedDim, kHidden), ad::LayerSpec::relu(),
                         ad::LayerSpec::linear(kHidden, kHidden), ad::LayerSpec::relu(),
                         ad::LayerSpec::linear(kHidden, 1)},
                        rng);
  }

  int rays() const { return rays_; }
  ad::Sequential& g() { return g_; }
  ad::Sequential& f() { return f_; }
  const ad::Sequential& g() const { return g_; }
  const ad::Sequential& f() const { return f_; }

  ad::ParameterList parameters() {
    ad::ParameterList out;
    g_.collect(out);
    f_.collect(out);
    return out;
  }

  // [B,3,W] -> [B,128]
  ad::Tensor embed_batch(const ad::Tensor& obs) const { return g_.infer(obs); }

  ad::Linear& f_layer(std::size_t i) { return dynamic_cast<ad::Linear&>(f_.layer(i)); }
  const ad::Linear& f_layer(std::size_t i) const { return dynamic_cast<const ad::Linear&>(f_.layer(i)); }

  void save(const std::string& path) { ad::save_checkpoint(path, ad::const_params(parameters())); }
  void load(const std::string& path) { ad::restore_parameters(ad::read_checkpoint(path), parameters()); }

 private:
  int rays_;
  ad::Sequential g_, f_;
};

inline std::vector<double> embed(const ReachabilityModel& model, const Observation& obs) {
  if (obs.rays != model.rays()) {
    throw ShapeMismatch("embed: observation has " + std::to_string(obs.rays) + " rays, model expects " +
                        std::to_string(model.rays()));
  }
  const auto e = model.embed_batch(stack_observations(obs));
  return {e.values.begin(), e.values.end()};
}

namespace detail {

// First comparator layer split into its current/memory halves plus bias.
inline std::vector<double> comparator_half(const ReachabilityModel& model, std::span<const double> e, bool current) {
  constexpr std::size_t D = ReachabilityModel::kEmbedDim, H = ReachabilityModel::kHidden;
  if (e.size() != D) throw ShapeMismatch("compare: embedding dim " + std::to_string(e.size()) + ", expected 128");
  const ad::Linear& l1 = model.f_layer(0);
  auto W = ad::as_matrix(l1.weight().value.values, H, 2 * D);
  std::vector<double> out(H);
  ad::VectorMap o(out.data(), H);
  o.noalias() = W.block(0, current ? 0 : D, H, D) * ad::ConstVectorMap(e.data(), D);
  if (current) o += ad::ConstVectorMap(l1.bias().value.data(), H);
  return out;
}

inline double comparator_logit(const ReachabilityModel& model, const double* cur_half, const double* mem_half) {
  constexpr std::size_t H = ReachabilityModel::kHidden;
  const ad::Linear &l2 = model.f_layer(2), &l3 = model.f_layer(4);
  Eigen::VectorXd h1(H);
  for (std::size_t i = 0; i < H; ++i) h1[i] = std::max(0.0, cur_half[i] + mem_half[i]);
  Eigen::VectorXd h2 = ad::as_matrix(l2.weight().value.values, H, H) * h1 + ad::ConstVectorMap(l2.bias().value.data(), H);
  h2 = h2.cwiseMax(0.0);
  return ad::ConstVectorMap(l3.weight().value.data(), H).dot(h2) + l3.bias().value[0];
}

}  // namespace detail

// Argument order is (current, memory) everywhere.
inline double compare(const ReachabilityModel& model, std::span<const double> e_current,
                      std::span<const double> e_memory) {
  const auto a = detail::comparator_half(model, e_current, true);
  const auto b = detail::comparator_half(model, e_memory, false);
  return ad::Sigmoid::apply(detail::comparator_logit(model, a.data(), b.data()));
}

// Memoizes embeddings and pair scores of a frozen model, keyed by observation content.
// Scores equal compare() bit for bit.
class ReachabilityScorer {
 public:
  explicit ReachabilityScorer(const ReachabilityModel& model) : model_(model) {}

  const ReachabilityModel& model() const { return model_; }
  ObservationStore& store() { return store_; }

  ObsId intern(const Observation& obs) {
    const ObsId id = store_.intern(obs);
    while (entries_.size() < store_.size()) entries_.emplace_back();
    return id;
  }

  const std::vector<double>& embedding(ObsId id) {
    Entry& e = entry(id);
    if (e.embedding.empty()) e.embedding = memnav::embed(model_, store_.get(id));
    return e.embedding;
  }

  double score(ObsId current, ObsId memory) {
    const std::uint64_t key = (static_cast<std::uint64_t>(current) << 32) | memory;
    if (auto it = scores_.find(key); it != scores_.end()) return it->second;
    const auto& a = half(current, true);
    const auto& b = half(memory, false);
    const double s = ad::Sigmoid::apply(detail::comparator_logit(model_, a.data(), b.data()));
    scores_.emplace(key, s);
    return s;
  }

  std::size_t cached_scores() const { return scores_.size(); }

 private:
  struct Entry {
    std::vector<double> embedding, cur_half, mem_half;
  };
  Entry& entry(ObsId id) {
    if (id >= entries_.size()) throw InvalidIndex("scorer: unknown observation id " + std::to_string(id));
    return entries_[id];
  }
  const std::vector<double>& half(ObsId id, bool current) {
    const auto& emb = embedding(id);
    Entry& e = entry(id);
    auto& slot = current ? e.cur_half : e.mem_half;
    if (slot.empty()) slot = detail::comparator_half(model_, emb, current);
    return slot;
  }

  const ReachabilityModel& model_;
  ObservationStore store_;
  std::vector<Entry> entries_;
  std::unordered_map<std::uint64_t, double> scores_;
};

struct ReachTrainConfig {
  int epochs = 20;
  std::size_t batch = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-7;
  double holdout_fraction = 0.1;
  double final_lr_fraction = 0.05;  // learning rate decays linearly per epoch to lr * this
  bool swap_augment = true;        // labels are symmetric, so present each pair in random order
  std::uint64_t seed = 0;
};

struct PairMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct EpochLog {
  int epoch = 0;
  PairMetrics train;
  PairMetrics holdout;
};

struct ReachTrainReport {
  PairMetrics initial_train;
  PairMetrics initial_holdout;
  std::vector<EpochLog> epochs;
  std::vector<std::size_t> train_indices, holdout_indices;
};

// Whole walks go to the holdout side (the highest walk ids); a single-walk set falls back to a pair split.
inline void split_by_walk(const std::vector<LabeledPair>& pairs, double fraction, std::vector<std::size_t>& train,
                          std::vector<std::size_t>& holdout) {
  train.clear();
  holdout.clear();
  std::uint32_t walks = 0;
  for (const auto& p : pairs) walks = std::max(walks, p.walk + 1);
  if (walks >= 2) {
    const auto held = std::clamp<std::uint32_t>(static_cast<std::uint32_t>(std::lround(fraction * walks)), 1, walks - 1);
    for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].walk >= walks - held ? holdout : train).push_back(i);
  } else {
    const std::size_t held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pairs.size())));
    for (std::size_t i = 0; i < pairs.size(); ++i) (i + held >= pairs.size() ? holdout : train).push_back(i);
  }
}

namespace detail {

inline void gather_batch(const std::vector<LabeledPair>& pairs, std::span<const std::size_t> idx, ad::Tensor& both,
                         std::vector<double>& labels, Rng* swap_rng = nullptr) {
  std::vector<const Observation*> obs(2 * idx.size());
  labels.resize(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    obs[b] = &pairs[idx[b]].obs_a;
    obs[idx.size() + b] = &pairs[idx[b]].obs_b;
    if (swap_rng && swap_rng->below(2)) std::swap(obs[b], obs[idx.size() + b]);
    labels[b] = pairs[idx[b]].label;
  }
  both = stack_observations(obs);
}

// [2B,D] embeddings (a rows then b rows) -> [B,2D] comparator input.
inline ad::Tensor pair_features(const ad::Tensor& emb, std::size_t batch) {
  constexpr std::size_t D = ReachabilityModel::kEmbedDim;
  ad::Tensor x({batch, 2 * D});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(emb.values.begin() + static_cast<long>(b * D), D, x.values.begin() + static_cast<long>(b * 2 * D));
    std::copy_n(emb.values.begin() + static_cast<long>((batch + b) * D), D,
                x.values.begin() + static_cast<long>(b * 2 * D + D));
  }
  return x;
}

// Numerically stable BCE on a logit.
inline double bce_logit(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

}  // namespace detail

inline PairMetrics evaluate_pairs(const ReachabilityModel& model, const std::vector<LabeledPair>& pairs,
                                  std::span<const std::size_t> indices, std::size_t batch = 256) {
  PairMetrics m;
  ad::Tensor both;
  std::vector<double> labels;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const auto idx = indices.subspan(start, std::min(batch, indices.size() - start));
    detail::gather_batch(pairs, idx, both, labels);
    const ad::Tensor logits = model.f().infer(detail::pair_features(model.embed_batch(both), idx.size()));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      m.loss += detail::bce_logit(logits[b], labels[b]);
      m.accuracy += ((logits[b] > 0.0) == (labels[b] > 0.5)) ? 1.0 : 0.0;
    }
  }
  m.count = indices.size();
  if (m.count > 0) {
    m.loss /= static_cast<double>(m.count);
    m.accuracy /= static_cast<double>(m.count);
  }
  return m;
}

inline PairMetrics evaluate_pairs(const ReachabilityModel& model, const std::vector<LabeledPair>& pairs) {
  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate_pairs(model, pairs, all);
}

// Logistic regression on the pair labels with SGD + momentum. The model is trained in place.
inline ReachTrainReport train_reachability(ReachabilityModel& model, const std::vector<LabeledPair>& pairs,
                                           const ReachTrainConfig& cfg,
                                           const std::function<void(const EpochLog&)>& on_epoch = {}) {
  ReachTrainReport report;
  split_by_walk(pairs, cfg.holdout_fraction, report.train_indices, report.holdout_indices);
  report.initial_train = evaluate_pairs(model, pairs, report.train_indices);
  report.initial_holdout = evaluate_pairs(model, pairs, report.holdout_indices);

  ad::OptimizerConfig oc;
  oc.kind = ad::OptimizerKind::kSgdMomentum;
  oc.learning_rate = cfg.learning_rate;
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  ad::Optimizer opt(oc, model.parameters());
  opt.zero_grad();

  Rng rng(cfg.seed);
  std::vector<std::size_t> order = report.train_indices;
  ad::Tensor both;
  std::vector<double> labels;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    if (cfg.epochs > 1) {
      const double frac = static_cast<double>(epoch - 1) / (cfg.epochs - 1);
      opt.set_learning_rate(cfg.learning_rate * (1.0 - frac * (1.0 - cfg.final_lr_fraction)));
    }
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t B = std::min(cfg.batch, order.size() - start);
      detail::gather_batch(pairs, std::span<const std::size_t>(order).subspan(start, B), both, labels,
                           cfg.swap_augment ? &rng : nullptr);
      const ad::Tensor emb = model.g().forward(both);
      const ad::Tensor logits = model.f().forward(detail::pair_features(emb, B));
      ad::Tensor dlogits(logits.shape);
      for (std::size_t b = 0; b < B; ++b) {
        const double z = logits[b];
        if (!std::isfinite(z)) throw NonFiniteLoss("reachability training produced a non-finite logit");
        log.train.loss += detail::bce_logit(z, labels[b]);
        log.train.accuracy += ((z > 0.0) == (labels[b] > 0.5)) ? 1.0 : 0.0;
        dlogits[b] = (ad::Sigmoid::apply(z) - labels[b]) / static_cast<double>(B);
      }
      const ad::Tensor dx = model.f().backward(dlogits);
      constexpr std::size_t D = ReachabilityModel::kEmbedDim;
      ad::Tensor demb({2 * B, D});
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(dx.values.begin() + static_cast<long>(b * 2 * D), D, demb.values.begin() + static_cast<long>(b * D));
        std::copy_n(dx.values.begin() + static_cast<long>(b * 2 * D + D), D,
                    demb.values.begin() + static_cast<long>((B + b) * D));
      }
      model.g().backward(demb);
      opt.step();
    }
    log.train.count = order.size();
    if (!order.empty()) {
      log.train.loss /= static_cast<double>(order.size());
      log.train.accuracy /= static_cast<double>(order.size());
    }
    log.holdout = evaluate_pairs(model, pairs, report.holdout_indices);
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return report;
}

inline ReachabilityModel train_reachability(const std::vector<LabeledPair>& pairs, const ReachTrainConfig& cfg,
                                            ReachTrainReport* report = nullptr,
                                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (pairs.empty()) throw InsufficientWalkLength("train_reachability: no pairs");
  ReachabilityModel model(pairs.front().obs_a.rays, Rng::mix(cfg.seed ^ 0x9e3779b97f4a7c15ULL));
  auto r = train_reachability(model, pairs, cfg, on_epoch);
  if (report) *report = std::move(r);
  return model;
}

// Pair dataset: u64 count | u32 rays | u32 k | records of
// (f64 strip_a[rays*3], f64 strip_b[rays*3], u8 label, u32 walk). Strips are ray-major RGB.
inline void save_pair_dataset(const std::string& path, const std::vector<LabeledPair>& pairs, int k) {
  std::string out;
  const std::uint32_t rays = pairs.empty() ? 0 : static_cast<std::uint32_t>(pairs.front().obs_a.rays);
  ad::detail::put_u64(out, pairs.size());
  ad::detail::put_u32(out, rays);
  ad::detail::put_u32(out, static_cast<std::uint32_t>(k));
  for (const auto& p : pairs) {
    for (double v : p.obs_a.values) ad::detail::put_f64(out, v);
    for (double v : p.obs_b.values) ad::detail::put_f64(out, v);
    out.push_back(static_cast<char>(p.label));
    ad::detail::put_u32(out, p.walk);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write pair dataset: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline std::vector<LabeledPair> load_pair_dataset(const std::string& path, int* k_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("pair dataset not found: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    ad::detail::Reader r(bytes);
    const auto count = r.uint(8);
    const auto rays = static_cast<int>(r.uint(4));
    const auto k = static_cast<int>(r.uint(4));
    if (k_out) *k_out = k;
    std::vector<LabeledPair> pairs(count);
    for (auto& p : pairs) {
      for (Observation* o : {&p.obs_a, &p.obs_b}) {
        o->rays = rays;
        o->values.resize(static_cast<std::size_t>(rays) * 3);
        for (double& v : o->values) v = r.f64();
      }
      p.label = static_cast<int>(r.uint(1));
      p.walk = static_cast<std::uint32_t>(r.uint(4));
    }
    return pairs;
  } catch (const CheckpointError&) {
    throw ParseError("pair dataset truncated: " + path);
  }
}

}  // namespace memnav
