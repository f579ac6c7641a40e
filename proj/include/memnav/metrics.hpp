#pragma once

// Coverage, success rate and SPL.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "memnav/env.hpp"
#include "memnav/error.hpp"

namespace memnav {

class CoverageGrid {
 public:
  explicit CoverageGrid(const MazeMap& map) : map_(&map), visited_(static_cast<std::size_t>(map.cell_count()), false) {}

  // Returns true on the first visit of the pose's cell.
  bool visit(const Pose& p) {
    if (!map_->is_free(p.x, p.y)) throw InvalidIndex("coverage: pose outside free space");
    const auto i = static_cast<std::size_t>(map_->index(p.x, p.y));
    if (visited_[i]) return false;
    visited_[i] = true;
    ++count_;
    return true;
  }

  bool visited(int x, int y) const { return map_->in_bounds(x, y) && visited_[static_cast<std::size_t>(map_->index(x, y))]; }
  int count() const { return count_; }

 private:
  const MazeMap* map_;
  std::vector<bool> visited_;
  int count_ = 0;
};

inline int coverage(std::span<const Pose> poses, const MazeMap& map) {
  CoverageGrid grid(map);
  for (const Pose& p : poses) grid.visit(p);
  return grid.count();
}

struct GoalOutcome {
  int l = 0;          // oracle shortest length, cells
  bool success = false;
  int d = 0;          // cell-changing moves
  int steps_used = 0;
};

inline double spl(std::span<const GoalOutcome> results) {
  if (results.empty()) throw EmptyGoalSet("spl: no goals");
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.l <= 0) throw InvalidIndex("spl: goal with l <= 0");
    if (r.success) sum += static_cast<double>(r.l) / std::max(r.l, r.d);
  }
  return sum / static_cast<double>(results.size());
}

inline double success_rate(std::span<const GoalOutcome> results) {
  if (results.empty()) throw EmptyGoalSet("success_rate: no goals");
  const auto n = std::count_if(results.begin(), results.end(), [](const GoalOutcome& r) { return r.success; });
  return static_cast<double>(n) / static_cast<double>(results.size());
}

struct DistanceBin {
  int lo = 0, hi = 0;  // (lo, hi]
  int count = 0;
  double success_rate = 0.0;
  double spl = 0.0;
};

// Bins are (edges[i], edges[i+1]]. Bins without goals are left out.
inline std::vector<DistanceBin> breakdown_by_distance(std::span<const GoalOutcome> results, std::span<const int> edges) {
  std::vector<DistanceBin> out;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    std::vector<GoalOutcome> in;
    for (const auto& r : results)
      if (r.l > edges[i] && r.l <= edges[i + 1]) in.push_back(r);
    if (in.empty()) continue;
    out.push_back({edges[i], edges[i + 1], static_cast<int>(in.size()), success_rate(in), spl(in)});
  }
  return out;
}

inline std::map<int, int> length_histogram(std::span<const GoalOutcome> results) {
  std::map<int, int> h;
  for (const auto& r : results) ++h[r.l];
  return h;
}

}  // namespace memnav
