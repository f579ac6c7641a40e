#pragma once

// Image-goal evaluation: explore once from the start, then one navigation run per goal
// from a copy of the explored memory.

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "memnav/env.hpp"
#include "memnav/memory.hpp"
#include "memnav/metrics.hpp"
#include "memnav/policy.hpp"
#include "memnav/reachability.hpp"
#include "memnav/rl/rollout.hpp"
#include "memnav/rng.hpp"

namespace memnav {

struct Goal {
  Pose pose;
  Observation observation;
  int l = 0;
};

struct GoalSetConfig {
  int count = 50;
  int min_distance = 3;
  std::uint64_t seed = 1;

  void validate() const {
    if (count <= 0) throw ConfigError("goals.count must be positive");
    if (min_distance < 1) throw ConfigError("goals.min_distance must be >= 1");
  }
};

// Goals drawn uniformly (with replacement) over free cells at least min_distance from the start, random heading.
inline std::vector<Goal> make_goal_set(const MazeMap& map, const GoalSetConfig& cfg, int rays = kDefaultRays) {
  cfg.validate();
  const auto field = distance_field(map, map.start().x, map.start().y);
  std::vector<std::pair<int, int>> cells;
  for (const auto& [x, y] : map.free_cells()) {
    const int d = field[static_cast<std::size_t>(map.index(x, y))];
    if (d >= cfg.min_distance) cells.emplace_back(x, y);
  }
  if (cells.empty()) throw EmptyGoalSet("no free cell far enough from the start");
  Rng rng(cfg.seed);
  Renderer renderer(rays);
  std::vector<Goal> goals;
  for (int i = 0; i < cfg.count; ++i) {
    const auto [x, y] = cells[rng.below(cells.size())];
    Goal g;
    g.pose = {x, y, static_cast<int>(rng.below(4))};
    g.observation = renderer.render(map, g.pose);
    g.l = oracle_distance(map, map.start(), g.pose);
    goals.push_back(std::move(g));
  }
  return goals;
}

struct EvalConfig {
  int steps_explore = 200;
  int steps_nav = 200;
  double tau = 0.5;
  int success_radius = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps_explore < 0 || steps_nav <= 0) throw ConfigError("eval step budgets must be positive");
    if (success_radius < 0) throw ConfigError("eval.success_radius must be >= 0");
  }
};

inline bool within_radius(const MazeMap& map, const std::vector<int>& goal_field, const Pose& p, int radius) {
  const int d = goal_field[static_cast<std::size_t>(map.index(p.x, p.y))];
  return d >= 0 && d <= radius;
}

namespace detail {

inline GoalOutcome navigate_to(RolloutWorker& w, const PolicyNet* net, EpisodicMemory& mem, const Goal& goal,
                               const EvalConfig& cfg, int t0, Rng& rng) {
  const MazeMap& map = w.map();
  const auto field = distance_field(map, goal.pose.x, goal.pose.y);
  const ObsId g = w.intern(goal.observation);
  GoalOutcome out;
  out.l = goal.l;
  Pose pose = map.start();
  ObsId x = w.view(pose);
  int t = t0;
  if (net) mem.observe(w.scorer(), x, t);
  if (within_radius(map, field, pose, cfg.success_radius)) {
    out.success = true;
    return out;
  }
  for (int k = 0; k < cfg.steps_nav; ++k, ++t) {
    const Action a = net ? decide(*net, HeadKind::kNavigate, w, x, g, mem, t, rng).action : random_decision(rng).action;
    const Pose next = step(map, pose, a);
    if (!next.same_cell(pose)) ++out.d;
    pose = next;
    x = w.view(pose);
    ++out.steps_used;
    if (net) mem.observe(w.scorer(), x, t + 1);
    if (within_radius(map, field, pose, cfg.success_radius)) {
      out.success = true;
      break;
    }
  }
  return out;
}

}  // namespace detail

// net == nullptr is the random baseline: no exploration phase, uniform actions.
inline std::vector<GoalOutcome> evaluate_navigation(const MazeMap& map, const ReachabilityModel& reach, const PolicyNet* net,
                                                    const std::vector<Goal>& goals, const EvalConfig& cfg) {
  cfg.validate();
  if (goals.empty()) throw EmptyGoalSet("evaluate_navigation: no goals");
  RolloutWorker w(map, reach, net ? net->rays() : kDefaultRays);
  EpisodicMemory explored(cfg.tau);
  int t = 0;
  if (net) {
    Rng rng(Rng::mix(cfg.seed ^ 0xe1e1ULL));
    Pose pose = map.start();
    ObsId x = w.view(pose);
    explored.observe(w.scorer(), x, t);
    for (; t < cfg.steps_explore; ++t) {
      pose = step(map, pose, detail::decide(*net, HeadKind::kExplore, w, x, kNoObs, explored, t, rng).action);
      x = w.view(pose);
      explored.observe(w.scorer(), x, t + 1);
    }
    ++t;
  }
  std::vector<GoalOutcome> out;
  for (std::size_t i = 0; i < goals.size(); ++i) {
    Rng rng(Rng::mix(Rng::mix(cfg.seed) ^ (i + 1)));
    EpisodicMemory mem = explored;
    out.push_back(detail::navigate_to(w, net, mem, goals[i], cfg, t, rng));
  }
  return out;
}

inline void write_results_csv(std::ostream& out, std::span<const GoalOutcome> results) {
  out << "goal_id,l_i,s_i,d_i,steps_used\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out << i << ',' << r.l << ',' << (r.success ? 1 : 0) << ',' << r.d << ',' << r.steps_used << '\n';
  }
}

inline std::vector<int> default_distance_edges(std::span<const GoalOutcome> results, int width = 5) {
  int hi = 0;
  for (const auto& r : results) hi = std::max(hi, r.l);
  std::vector<int> edges{0};
  while (edges.back() < hi) edges.push_back(edges.back() + width);
  if (edges.size() == 1) edges.push_back(width);
  return edges;
}

inline nlohmann::ordered_json summary_json(std::span<const GoalOutcome> results, std::span<const int> edges) {
  nlohmann::ordered_json j;
  j["goals"] = results.size();
  j["success_rate"] = success_rate(results);
  j["spl"] = spl(results);
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : breakdown_by_distance(results, edges)) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"success_rate", b.success_rate}, {"spl", b.spl}});
  }
  j["bins"] = bins;
  auto hist = nlohmann::ordered_json::object();
  for (const auto& [l, n] : length_histogram(results)) hist[std::to_string(l)] = n;
  j["length_histogram"] = hist;
  return j;
}

}  // namespace memnav
