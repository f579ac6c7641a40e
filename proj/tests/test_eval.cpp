#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "memnav/eval.hpp"
#include "memnav/metrics.hpp"

namespace memnav {
namespace {

const std::string kFixtures = MEMNAV_FIXTURE_DIR;

TEST(Spl, SingleGoalExamples) {
  const std::vector<GoalOutcome> exact{{10, true, 10, 30}};
  const std::vector<GoalOutcome> twice{{10, true, 20, 40}};
  const std::vector<GoalOutcome> failed{{7, false, 3, 200}};
  EXPECT_EQ(spl(exact), 1.0);
  EXPECT_EQ(spl(twice), 0.5);
  EXPECT_EQ(spl(failed), 0.0);
}

TEST(Spl, TenGoalHandSet) {
  // terms: 1, 0.5, 0.75, 0, 1, 0.25, 0, 1, 0, 0  (a success shorter than l still scores 1)
  const std::vector<GoalOutcome> r{
      {6, true, 6, 20},  {4, true, 8, 30},   {3, true, 4, 9},    {9, false, 12, 200}, {5, true, 3, 11},
      {8, true, 32, 90}, {12, false, 0, 200}, {2, true, 2, 2},   {7, false, 40, 200}, {10, false, 10, 200}};
  EXPECT_EQ(success_rate(r), 0.6);
  EXPECT_EQ(spl(r), 0.45);
  EXPECT_LE(spl(r), success_rate(r));
}

TEST(Spl, Errors) {
  const std::vector<GoalOutcome> none;
  EXPECT_THROW(spl(none), EmptyGoalSet);
  EXPECT_THROW(success_rate(none), EmptyGoalSet);
  const std::vector<GoalOutcome> zero{{0, true, 0, 0}};
  EXPECT_THROW(spl(zero), InvalidIndex);
}

TEST(Spl, FuzzBoundedBySuccessRate) {
  Rng rng(2024);
  for (int c = 0; c < 10000; ++c) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<GoalOutcome> r(n), shortest(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = {1 + static_cast<int>(rng.below(30)), rng.below(2) == 1, static_cast<int>(rng.below(80)), 0};
      shortest[i] = r[i];
      if (shortest[i].success) shortest[i].d = shortest[i].l;
    }
    const double s = spl(r), rate = success_rate(r);
    ASSERT_GE(s, 0.0);
    ASSERT_LE(s, rate) << "case " << c;
    ASSERT_EQ(spl(shortest), success_rate(shortest)) << "case " << c;
  }
}

TEST(Coverage, Examples) {
  const MazeMap map = load_map_file(kFixtures + "/maps/maze15a.txt", 1);
  const Pose s = map.start();
  const std::vector<Pose> still(10, s);
  EXPECT_EQ(coverage(still, map), 1);

  std::vector<Pose> path;
  Pose p = s;
  for (Action a : {Action::kForward, Action::kForward, Action::kForward, Action::kForward})  {
    path.push_back(p);
    p = step(map, p, a);
  }
  path.push_back(p);
  for (int i = 3; i >= 0; --i) path.push_back(path[static_cast<std::size_t>(i)]);
  ASSERT_EQ(path.size(), 9u);
  EXPECT_EQ(coverage(path, map), 5);

  std::vector<Pose> shuffled = path;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
  EXPECT_EQ(coverage(shuffled, map), coverage(path, map));

  const std::vector<Pose> wall{{0, 0, 0}};
  EXPECT_THROW(coverage(wall, map), InvalidIndex);
}

// Plain random walk with its own cell set; pins the baseline the trained explorers are compared against.
TEST(Coverage, RandomWalkReference) {
  const MazeMap map = load_map_file(kFixtures + "/maps/maze15a.txt", 1);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Pose p = map.start();
    std::set<std::pair<int, int>> cells{{p.x, p.y}};
    for (int t = 0; t < 200; ++t) {
      p = step(map, p, static_cast<Action>(rng.below(kNumActions)));
      cells.insert({p.x, p.y});
    }
    total += static_cast<double>(cells.size());
  }
  EXPECT_EQ(total, 418.0);
}

TEST(Breakdown, Bins) {
  const std::vector<GoalOutcome> r{{2, true, 2, 5}, {4, false, 9, 200}, {6, true, 12, 40}, {9, true, 9, 20}, {3, true, 6, 10}};
  const std::vector<int> one{0, 100};
  const auto all = breakdown_by_distance(r, one);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0].count, 5);
  EXPECT_EQ(all[0].spl, spl(r));
  EXPECT_EQ(all[0].success_rate, success_rate(r));

  const std::vector<int> two{0, 5, 10};
  const auto b = breakdown_by_distance(r, two);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].count + b[1].count, 5);
  EXPECT_EQ(b[0].count, 3);

  const std::vector<int> hole{0, 1, 5, 10};
  const auto h = breakdown_by_distance(r, hole);
  ASSERT_EQ(h.size(), 2u);  // (0,1] is empty and left out
  EXPECT_EQ(h[0].lo, 1);
}

TEST(Breakdown, Histogram) {
  const std::vector<GoalOutcome> r{{2, true, 2, 5}, {4, false, 9, 200}, {2, true, 12, 40}};
  const auto h = length_histogram(r);
  EXPECT_EQ(h.at(2), 2);
  EXPECT_EQ(h.at(4), 1);
}

class EvalTest : public ::testing::Test {
 protected:
  EvalTest() : map(load_map_file(kFixtures + "/maps/maze15a.txt", 1)), reach(kDefaultRays, 77), net(kDefaultRays, 5) {}
  MazeMap map;
  ReachabilityModel reach;
  PolicyNet net;
};

TEST_F(EvalTest, RolloutRandomWalkMatchesPlainWalk) {
  RolloutWorker w(map, reach);
  RewardConfig rc;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Pose p = map.start();
    std::set<std::pair<int, int>> cells{{p.x, p.y}};
    for (int t = 0; t < 200; ++t) {
      p = step(map, p, static_cast<Action>(rng.below(kNumActions)));
      cells.insert({p.x, p.y});
    }
    EXPECT_EQ(run_exploration_episode(w, nullptr, rc, 200, seed).coverage, static_cast<int>(cells.size()));
  }
}

TEST_F(EvalTest, GoalSet) {
  GoalSetConfig gc;
  gc.count = 40;
  gc.seed = 9;
  const auto goals = make_goal_set(map, gc);
  ASSERT_EQ(goals.size(), 40u);
  for (const auto& g : goals) {
    EXPECT_TRUE(map.is_free(g.pose.x, g.pose.y));
    EXPECT_EQ(g.l, oracle_distance(map, map.start(), g.pose));
    EXPECT_GE(g.l, gc.min_distance);
    EXPECT_EQ(g.observation.values, render(map, g.pose).values);
  }
  const auto again = make_goal_set(map, gc);
  for (std::size_t i = 0; i < goals.size(); ++i) {
    EXPECT_TRUE(again[i].pose.same_cell(goals[i].pose));
    EXPECT_EQ(again[i].pose.heading, goals[i].pose.heading);
  }
  gc.min_distance = 1000;
  EXPECT_THROW(make_goal_set(map, gc), EmptyGoalSet);
}

TEST_F(EvalTest, OutcomeBookkeeping) {
  GoalSetConfig gc;
  gc.count = 12;
  const auto goals = make_goal_set(map, gc);
  EvalConfig ec;
  ec.steps_explore = 30;
  ec.steps_nav = 60;
  for (const PolicyNet* n : std::vector<const PolicyNet*>{nullptr, &net}) {
    const auto r = evaluate_navigation(map, reach, n, goals, ec);
    ASSERT_EQ(r.size(), goals.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_EQ(r[i].l, goals[i].l);
      EXPECT_LE(r[i].d, r[i].steps_used);
      EXPECT_LE(r[i].steps_used, ec.steps_nav);
      if (r[i].success) {
        // reaching within one cell needs at least l - 1 moves
        EXPECT_GE(r[i].d, r[i].l - ec.success_radius);
      } else {
        EXPECT_EQ(r[i].steps_used, ec.steps_nav);
      }
    }
    const auto again = evaluate_navigation(map, reach, n, goals, ec);
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_EQ(again[i].success, r[i].success);
      EXPECT_EQ(again[i].d, r[i].d);
      EXPECT_EQ(again[i].steps_used, r[i].steps_used);
    }
  }
}

TEST_F(EvalTest, GoalNextToStartIsReached) {
  Pose p = map.start();
  Pose q = step(map, p, Action::kForward);
  for (int turns = 0; q.same_cell(p) && turns < 4; ++turns) {
    p = step(map, p, Action::kTurnLeft);
    q = step(map, p, Action::kForward);
  }
  ASSERT_FALSE(q.same_cell(p));
  const std::vector<Goal> goals{{q, render(map, q), 1}};
  EvalConfig ec;
  ec.steps_explore = 10;
  for (const PolicyNet* n : std::vector<const PolicyNet*>{nullptr, &net}) {
    const auto r = evaluate_navigation(map, reach, n, goals, ec);
    EXPECT_TRUE(r[0].success);
    EXPECT_EQ(r[0].d, 0);
    EXPECT_EQ(spl(r), 1.0);
  }
}

// Random baseline against a plain re-simulation (own BFS radius check, own path counting); value pinned.
TEST_F(EvalTest, RandomBaselineReference) {
  const auto goals = make_goal_set(map, GoalSetConfig{});
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EvalConfig ec;
    ec.seed = seed;
    const auto r = evaluate_navigation(map, reach, nullptr, goals, ec);
    double plain = 0.0;
    for (std::size_t i = 0; i < goals.size(); ++i) {
      Rng rng(Rng::mix(Rng::mix(seed) ^ (i + 1)));
      const auto field = distance_field(map, goals[i].pose.x, goals[i].pose.y);
      auto near = [&](const Pose& p) { return field[static_cast<std::size_t>(map.index(p.x, p.y))] <= 1; };
      Pose p = map.start();
      int d = 0;
      bool ok = near(p);
      for (int k = 0; k < ec.steps_nav && !ok; ++k) {
        const Pose q = step(map, p, static_cast<Action>(rng.below(kNumActions)));
        d += q.same_cell(p) ? 0 : 1;
        p = q;
        ok = near(p);
      }
      EXPECT_EQ(r[i].success, ok);
      EXPECT_EQ(r[i].d, d);
      if (ok) plain += static_cast<double>(goals[i].l) / std::max(goals[i].l, d);
    }
    EXPECT_NEAR(spl(r), plain / static_cast<double>(goals.size()), 1e-12);
    total += spl(r);
  }
  EXPECT_NEAR(total / 5.0, 0.0786728356971758, 1e-12);
}

TEST(EvalOutput, CsvAndSummary) {
  const std::vector<GoalOutcome> r{{2, true, 2, 5}, {7, false, 9, 200}, {12, true, 24, 40}};
  std::ostringstream csv;
  write_results_csv(csv, r);
  EXPECT_EQ(csv.str(), "goal_id,l_i,s_i,d_i,steps_used\n0,2,1,2,5\n1,7,0,9,200\n2,12,1,24,40\n");
  const auto edges = default_distance_edges(r);
  EXPECT_EQ(edges, (std::vector<int>{0, 5, 10, 15}));
  const auto j = summary_json(r, edges);
  EXPECT_EQ(j["goals"], 3);
  EXPECT_EQ(j["spl"].get<double>(), spl(r));
  ASSERT_EQ(j["bins"].size(), 3u);
  EXPECT_EQ(j["bins"][2]["lo"], 10);
  EXPECT_EQ(j["length_histogram"]["7"], 1);
}

}  // namespace
}  // namespace memnav
