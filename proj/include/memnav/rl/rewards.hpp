#pragma once

// Reward providers. Self-supervised providers never take a Pose; only the
// oracle baselines see simulator state.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memnav/env.hpp"
#include "memnav/error.hpp"
#include "memnav/memory.hpp"
#include "memnav/reachability.hpp"

namespace memnav {

enum class RewardMode {
  kCuriosityDiscrete,
  kCuriosityContinuous,
  kNavSparse,
  kNavSparsePlusDense,
  kOracleCoverage,
  kOracleDistance,
};

inline const char* mode_name(RewardMode m) {
  switch (m) {
    case RewardMode::kCuriosityDiscrete: return "discrete";
    case RewardMode::kCuriosityContinuous: return "continuous";
    case RewardMode::kNavSparse: return "sparse";
    case RewardMode::kNavSparsePlusDense: return "dense";
    case RewardMode::kOracleCoverage: return "oracle_coverage";
    case RewardMode::kOracleDistance: return "oracle_distance";
  }
  return "?";
}

inline RewardMode parse_mode(const std::string& s) {
  for (auto m : {RewardMode::kCuriosityDiscrete, RewardMode::kCuriosityContinuous, RewardMode::kNavSparse,
                 RewardMode::kNavSparsePlusDense, RewardMode::kOracleCoverage, RewardMode::kOracleDistance}) {
    if (s == mode_name(m)) return m;
  }
  if (s == "sparse+dense") return RewardMode::kNavSparsePlusDense;
  throw ConfigError("unknown reward mode '" + s + "'");
}

inline bool is_oracle(RewardMode m) { return m == RewardMode::kOracleCoverage || m == RewardMode::kOracleDistance; }
inline bool is_navigation(RewardMode m) {
  return m == RewardMode::kNavSparse || m == RewardMode::kNavSparsePlusDense || m == RewardMode::kOracleDistance;
}

struct RewardConfig {
  double alpha = 1.0;            // curiosity scale
  double beta = 10.0;            // sparse navigation scale
  double continuous_beta = 1.0;  // offset of the continuous curiosity ablation
  double tau = 0.5;
  RewardMode mode = RewardMode::kCuriosityDiscrete;

  void validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw ConfigError("reward: alpha and beta must be > 0");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("reward: tau must lie in (0,1)");
  }
};

inline double curiosity_reward(bool inserted, double alpha) { return inserted ? alpha : 0.0; }

// An empty buffer scores -inf; the formula reads it as 0.
inline double curiosity_reward_continuous(double score, double alpha, double beta) {
  const double s = std::isinf(score) && score < 0 ? 0.0 : score;
  return alpha * (beta - s);
}

inline double sparse_nav_reward(double score, double beta, double tau) { return score > tau ? beta : 0.0; }

inline double sparse_nav_reward(const ReachabilityModel& model, const Observation& obs, const Observation& goal,
                                double beta, double tau) {
  return sparse_nav_reward(compare(model, embed(model, obs), embed(model, goal)), beta, tau);
}

// max(0, min(history) - l); unreachable entries are skipped, an empty history or unreachable l gives 0.
inline double dense_nav_reward(std::span<const std::optional<int>> history, std::optional<int> l) {
  if (!l) return 0.0;
  std::optional<int> best;
  for (const auto& h : history)
    if (h && (!best || *h < *best)) best = h;
  if (!best) return 0.0;
  return static_cast<double>(std::max(0, *best - *l));
}

// Running form of dense_nav_reward for one goal.
class DenseRewardTracker {
 public:
  void reset() { has_best_ = false; }
  std::optional<int> best() const { return has_best_ ? std::optional<int>(best_) : std::nullopt; }

  double push(std::optional<int> l) {
    if (!l) return 0.0;
    double r = 0.0;
    if (has_best_) r = static_cast<double>(std::max(0, best_ - *l));
    if (!has_best_ || *l < best_) best_ = *l;
    has_best_ = true;
    return r;
  }

 private:
  int best_ = 0;
  bool has_best_ = false;
};

// Supervised baselines: first visit of a cell (+1) or reaching the goal cell (+10, once).
class OracleRewards {
 public:
  OracleRewards(RewardMode mode, const MazeMap& map)
      : mode_(mode), visited_(static_cast<std::size_t>(map.cell_count()), false), map_(&map) {
    if (!is_oracle(mode)) throw ModeMismatch(std::string("oracle rewards requested in mode ") + mode_name(mode));
  }

  void set_goal(const Pose& goal) {
    goal_ = goal;
    goal_paid_ = false;
  }

  double reward(const Pose& pose) {
    if (mode_ == RewardMode::kOracleCoverage) {
      const auto cell = static_cast<std::size_t>(map_->index(pose.x, pose.y));
      if (visited_[cell]) return 0.0;
      visited_[cell] = true;
      return 1.0;
    }
    if (!goal_ || goal_paid_ || !pose.same_cell(*goal_)) return 0.0;
    goal_paid_ = true;
    return 10.0;
  }

 private:
  RewardMode mode_;
  std::vector<bool> visited_;
  const MazeMap* map_;
  std::optional<Pose> goal_;
  bool goal_paid_ = false;
};

// Guard for reward code paths that must not run in a given mode.
inline void require_oracle(RewardMode mode) {
  if (!is_oracle(mode)) throw ModeMismatch(std::string("oracle reward in self-supervised mode ") + mode_name(mode));
}

}  // namespace memnav
