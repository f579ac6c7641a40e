#pragma once

// Episode rollouts. Each observation x_t goes through the episodic memory
// first; the policy then acts on x_t and the updated buffer M_t, and the reward
// for a_t comes from observing x_{t+1}.

#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "memnav/env.hpp"
#include "memnav/memory.hpp"
#include "memnav/metrics.hpp"
#include "memnav/observation_store.hpp"
#include "memnav/policy.hpp"
#include "memnav/reachability.hpp"
#include "memnav/rl/rewards.hpp"
#include "memnav/rng.hpp"

namespace memnav {

// One observation pushed through the memory.
struct ObservedStep {
  int view = 0;  // index into EpisodeTrace::views
  int t = 0;
  double score = kEmptyNovelty;
  bool inserted = false;
  int anchor = -1;
  Pose pose;  // oracle log
};

// One policy decision.
struct TraceStep {
  int event = 0;       // observed index of x_t
  int next_event = 0;  // observed index of x_{t+1}
  int t = 0;
  std::size_t memory_count = 0;  // policy saw entries [0, memory_count)
  int goal_entry = -1;
  int goal_view = -1;
  bool new_goal = false;  // goal was (re)sampled right before this step
  Action action = Action::kForward;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
};

struct EpisodeTrace {
  std::uint64_t seed = 0;
  RewardMode mode = RewardMode::kCuriosityDiscrete;
  HeadKind head = HeadKind::kExplore;
  std::vector<Observation> views;  // distinct observations of the episode
  std::vector<ObservedStep> observed;
  std::vector<TraceStep> steps;
  EpisodicMemory memory;
  std::vector<Pose> entry_poses;  // oracle log of where each entry was stored; display only
  int coverage = 0;
  int goals_reached = 0;

  double total_reward() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.reward;
    return s;
  }
  const Observation& view_at(int event) const { return views.at(static_cast<std::size_t>(observed.at(static_cast<std::size_t>(event)).view)); }
};

// Per-thread caches. Cached and fresh values are identical, so results do not depend on cache state.
class RolloutWorker {
 public:
  RolloutWorker(const MazeMap& map, const ReachabilityModel& reach, int rays = kDefaultRays)
      : map_(map), renderer_(rays), scorer_(reach), views_(static_cast<std::size_t>(map.cell_count()) * 4, kNoObs) {}

  const MazeMap& map() const { return map_; }
  ReachabilityScorer& scorer() { return scorer_; }

  ObsId view(const Pose& p) {
    ObsId& slot = views_[static_cast<std::size_t>(map_.index(p.x, p.y)) * 4 + static_cast<std::size_t>(p.heading)];
    if (slot == kNoObs) slot = scorer_.intern(renderer_.render(map_, p));
    return slot;
  }
  ObsId intern(const Observation& obs) { return scorer_.intern(obs); }
  const Observation& observation(ObsId id) { return scorer_.store().get(id); }

  // CNN(x) of the current policy parameters; clear after every update.
  const std::vector<double>& features(const PolicyNet& net, ObsId id) {
    auto it = features_.find(id);
    if (it == features_.end()) {
      const ad::Tensor f = net.features(stack_observations(observation(id)));
      it = features_.emplace(id, std::vector<double>(f.values.begin(), f.values.end())).first;
    }
    return it->second;
  }
  void clear_features() { features_.clear(); }

 private:
  const MazeMap& map_;
  Renderer renderer_;
  ReachabilityScorer scorer_;
  std::vector<ObsId> views_;
  std::unordered_map<ObsId, std::vector<double>> features_;
};

// Reward of a curiosity step. Takes only memory output, never a pose.
inline double curiosity_step_reward(const RewardConfig& rc, const MemoryStep& ms) {
  switch (rc.mode) {
    case RewardMode::kCuriosityDiscrete: return curiosity_reward(ms.inserted, rc.alpha);
    case RewardMode::kCuriosityContinuous: return curiosity_reward_continuous(ms.score, rc.alpha, rc.continuous_beta);
    default: throw ModeMismatch(std::string("curiosity reward in mode ") + mode_name(rc.mode));
  }
}

// Reward of a navigation step from the goal comparator score and graph distance; never a pose.
inline double navigation_step_reward(const RewardConfig& rc, double goal_score, std::optional<int> l,
                                     DenseRewardTracker& dense) {
  if (rc.mode != RewardMode::kNavSparse && rc.mode != RewardMode::kNavSparsePlusDense) {
    throw ModeMismatch(std::string("navigation reward in mode ") + mode_name(rc.mode));
  }
  double r = sparse_nav_reward(goal_score, rc.beta, rc.tau);
  if (rc.mode == RewardMode::kNavSparsePlusDense) r += dense.push(l);
  return r;
}

namespace detail {

class EpisodeRecorder {
 public:
  EpisodeRecorder(RolloutWorker& w, EpisodeTrace& trace, double tau) : w_(w), trace_(trace), grid_(w.map()) {
    trace_.memory = EpisodicMemory(tau);
  }

  MemoryStep observe(ObsId id, const Pose& pose, int t) {
    const MemoryStep ms = trace_.memory.observe(w_.scorer(), id, t);
    auto [it, fresh] = view_index_.emplace(id, static_cast<int>(trace_.views.size()));
    if (fresh) trace_.views.push_back(w_.observation(id));
    trace_.observed.push_back({it->second, t, ms.score, ms.inserted, ms.anchor, pose});
    if (ms.inserted) trace_.entry_poses.push_back(pose);
    grid_.visit(pose);
    trace_.coverage = grid_.count();
    return ms;
  }

  int view_of(ObsId id) const { return view_index_.at(id); }
  int last_event() const { return static_cast<int>(trace_.observed.size()) - 1; }

 private:
  RolloutWorker& w_;
  EpisodeTrace& trace_;
  CoverageGrid grid_;
  std::unordered_map<ObsId, int> view_index_;
};

inline void append_cached_features(ad::Tensor& dst, const std::vector<double>& f) {
  dst = ad::Tensor({1, f.size()});
  std::copy(f.begin(), f.end(), dst.values.begin());
}

struct Decision {
  Action action;
  double log_prob, value;
};

inline Decision decide(const PolicyNet& net, HeadKind k, RolloutWorker& w, ObsId obs, ObsId goal,
                       const EpisodicMemory& mem, int t, Rng& rng) {
  PolicyInput in;
  append_cached_features(in.obs_features, w.features(net, obs));
  if (k == HeadKind::kNavigate) append_cached_features(in.goal_features, w.features(net, goal));
  append_memory(in, mem.buffer(), net.ages(k), t);
  const PolicyOutput out = single_output(net.infer(k, in));
  const ActionSample s = sample_action(out, rng);
  return {s.action, s.log_prob, out.value};
}

inline Decision random_decision(Rng& rng) {
  return {static_cast<Action>(rng.below(kNumActions)), -std::log(static_cast<double>(kNumActions)), 0.0};
}

}  // namespace detail

// Exploration episode from the map start. net == nullptr gives a uniform random walk.
inline EpisodeTrace run_exploration_episode(RolloutWorker& w, const PolicyNet* net, const RewardConfig& rc, int steps,
                                            std::uint64_t seed) {
  if (is_navigation(rc.mode)) throw ModeMismatch(std::string("exploration episode in mode ") + mode_name(rc.mode));
  Rng rng(seed);
  EpisodeTrace trace;
  trace.seed = seed;
  trace.mode = rc.mode;
  trace.head = HeadKind::kExplore;
  detail::EpisodeRecorder rec(w, trace, rc.tau);
  std::optional<OracleRewards> oracle;
  if (rc.mode == RewardMode::kOracleCoverage) {
    oracle.emplace(rc.mode, w.map());
    oracle->reward(w.map().start());
  }

  Pose pose = w.map().start();
  ObsId x = w.view(pose);
  rec.observe(x, pose, 0);
  for (int t = 0; t < steps; ++t) {
    TraceStep st;
    st.event = rec.last_event();
    st.t = t;
    st.memory_count = trace.memory.buffer().size();
    const auto d = net ? detail::decide(*net, HeadKind::kExplore, w, x, kNoObs, trace.memory, t, rng) : detail::random_decision(rng);
    st.action = d.action;
    st.log_prob = d.log_prob;
    st.value = d.value;
    pose = step(w.map(), pose, d.action);
    x = w.view(pose);
    const MemoryStep ms = rec.observe(x, pose, t + 1);
    st.next_event = rec.last_event();
    st.reward = oracle ? oracle->reward(pose) : curiosity_step_reward(rc, ms);
    trace.steps.push_back(st);
  }
  return trace;
}

namespace detail {

// Uniform over buffer entries, skipping entries that would already count as reached when others exist.
inline int sample_goal(RolloutWorker& w, const EpisodeTrace& trace, const RewardConfig& rc, ObsId current,
                       const Pose& pose, Rng& rng) {
  const MemoryBuffer& buf = trace.memory.buffer();
  if (buf.empty()) throw EmptyBufferAfterExploration("navigation: buffer empty after exploration");
  std::vector<int> candidates;
  for (std::size_t j = 0; j < buf.size(); ++j) {
    const bool reached = rc.mode == RewardMode::kOracleDistance ? trace.entry_poses[j].same_cell(pose)
                                                                 : w.scorer().score(current, buf[j].obs) > rc.tau;
    if (!reached) candidates.push_back(static_cast<int>(j));
  }
  if (candidates.empty()) return static_cast<int>(rng.below(buf.size()));
  return candidates[rng.below(candidates.size())];
}

}  // namespace detail

// Exploration phase with the frozen explore head, then a navigation phase from the start pose
// towards goals drawn from the buffer. Only navigation steps are recorded as decisions.
inline EpisodeTrace run_navigation_episode(RolloutWorker& w, const PolicyNet& net, const RewardConfig& rc, int t_explore,
                                           int t_nav, std::uint64_t seed) {
  if (!is_navigation(rc.mode)) throw ModeMismatch(std::string("navigation episode in mode ") + mode_name(rc.mode));
  Rng rng(seed);
  EpisodeTrace trace;
  trace.seed = seed;
  trace.mode = rc.mode;
  trace.head = HeadKind::kNavigate;
  detail::EpisodeRecorder rec(w, trace, rc.tau);

  Pose pose = w.map().start();
  ObsId x = w.view(pose);
  int t = 0;
  rec.observe(x, pose, t);
  for (; t < t_explore; ++t) {
    const auto d = detail::decide(net, HeadKind::kExplore, w, x, kNoObs, trace.memory, t, rng);
    pose = step(w.map(), pose, d.action);
    x = w.view(pose);
    rec.observe(x, pose, t + 1);
  }

  pose = w.map().start();
  x = w.view(pose);
  ++t;
  rec.observe(x, pose, t);

  std::optional<OracleRewards> oracle;
  if (rc.mode == RewardMode::kOracleDistance) oracle.emplace(rc.mode, w.map());
  DenseRewardTracker dense;
  int goal = -1;
  bool new_goal = true;
  auto pick_goal = [&] {
    goal = detail::sample_goal(w, trace, rc, x, pose, rng);
    new_goal = true;
    dense.reset();
    if (rc.mode == RewardMode::kNavSparsePlusDense) dense.push(trace.memory.distance_to(goal));
    if (oracle) oracle->set_goal(trace.entry_poses[static_cast<std::size_t>(goal)]);
  };
  pick_goal();

  for (int k = 0; k < t_nav; ++k, ++t) {
    const ObsId g = trace.memory.buffer()[static_cast<std::size_t>(goal)].obs;
    TraceStep st;
    st.event = rec.last_event();
    st.t = t;
    st.memory_count = trace.memory.buffer().size();
    st.goal_entry = goal;
    st.goal_view = rec.view_of(g);
    st.new_goal = new_goal;
    new_goal = false;
    const auto d = detail::decide(net, HeadKind::kNavigate, w, x, g, trace.memory, t, rng);
    st.action = d.action;
    st.log_prob = d.log_prob;
    st.value = d.value;
    pose = step(w.map(), pose, d.action);
    x = w.view(pose);
    rec.observe(x, pose, t + 1);
    st.next_event = rec.last_event();
    bool success;
    if (oracle) {
      st.reward = oracle->reward(pose);
      success = st.reward > 0.0;
    } else {
      const double s = w.scorer().score(x, g);
      success = s > rc.tau;
      const auto l = rc.mode == RewardMode::kNavSparsePlusDense ? trace.memory.distance_to(goal) : std::nullopt;
      st.reward = navigation_step_reward(rc, s, l, dense);
    }
    trace.steps.push_back(st);
    if (success) {
      ++trace.goals_reached;
      if (k + 1 < t_nav) pick_goal();
    }
  }
  return trace;
}

// Rebuilds buffer and graph from the trace's observation stream alone.
inline EpisodicMemory replay_memory(const EpisodeTrace& trace, ReachabilityScorer& scorer, double tau) {
  EpisodicMemory mem(tau);
  for (const auto& ev : trace.observed) mem.observe(scorer, scorer.intern(trace.views.at(static_cast<std::size_t>(ev.view))), ev.t);
  return mem;
}

// Recomputes every reward of a self-supervised trace from observations and goal choices only.
inline std::vector<double> replay_rewards(const EpisodeTrace& trace, const ReachabilityModel& model, const RewardConfig& rc) {
  if (is_oracle(rc.mode)) throw ModeMismatch("replay: oracle rewards depend on poses");
  ReachabilityScorer scorer(model);
  EpisodicMemory mem(rc.tau);
  std::vector<double> rewards(trace.steps.size(), 0.0);
  std::vector<std::vector<std::size_t>> starts(trace.observed.size()), ends(trace.observed.size());
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    starts.at(static_cast<std::size_t>(trace.steps[k].event)).push_back(k);
    ends.at(static_cast<std::size_t>(trace.steps[k].next_event)).push_back(k);
  }
  DenseRewardTracker dense;
  for (std::size_t e = 0; e < trace.observed.size(); ++e) {
    const auto& ev = trace.observed[e];
    const ObsId id = scorer.intern(trace.views.at(static_cast<std::size_t>(ev.view)));
    const MemoryStep ms = mem.observe(scorer, id, ev.t);
    for (std::size_t k : ends[e]) {
      const TraceStep& st = trace.steps[k];
      if (!is_navigation(rc.mode)) {
        rewards[k] = curiosity_step_reward(rc, ms);
        continue;
      }
      const ObsId g = mem.buffer()[static_cast<std::size_t>(st.goal_entry)].obs;
      const auto l = rc.mode == RewardMode::kNavSparsePlusDense ? mem.distance_to(st.goal_entry) : std::nullopt;
      rewards[k] = navigation_step_reward(rc, scorer.score(id, g), l, dense);
    }
    for (std::size_t k : starts[e]) {
      const TraceStep& st = trace.steps[k];
      if (is_navigation(rc.mode) && st.new_goal) {
        dense.reset();
        if (rc.mode == RewardMode::kNavSparsePlusDense) dense.push(mem.distance_to(st.goal_entry));
      }
    }
  }
  return rewards;
}

}  // namespace memnav
