#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "memnav/env.hpp"

namespace memnav {
namespace {

const std::string kFixtures = MEMNAV_FIXTURE_DIR;

MazeMap open_room() {
  // Free columns 1..5, wall column 6.
  return load_map(
      "#######\n"
      "#.....#\n"
      "#.S...#\n"
      "#.....#\n"
      "#######\n",
      3);
}

TEST(LoadMap, SmallestLegalMap) {
  MazeMap m = load_map("###\n#S#\n###\n", 1);
  EXPECT_EQ(m.free_count(), 1);
  EXPECT_EQ(m.cell_count() - m.free_count(), 8);
  EXPECT_EQ(m.start(), (Pose{1, 1, 0}));
}

TEST(LoadMap, RejectsUnknownCharacter) {
  EXPECT_THROW(load_map("#####\n#S.Q#\n#####\n", 1), ParseError);
}

TEST(LoadMap, RejectsRaggedRows) {
  EXPECT_THROW(load_map("#####\n#S..#\n####\n", 1), ParseError);
}

TEST(LoadMap, RejectsOpenBorder) {
  EXPECT_THROW(load_map("#####\n#S...\n#####\n", 1), ParseError);
}

TEST(LoadMap, RejectsDisconnectedRegions) {
  EXPECT_THROW(load_map("#######\n#S.#..#\n#######\n", 1), DisconnectedMap);
}

TEST(LoadMap, RequiresExactlyOneStart) {
  EXPECT_THROW(load_map("#####\n#...#\n#####\n", 1), MissingStart);
  EXPECT_THROW(load_map("#####\n#S.S#\n#####\n", 1), ParseError);
}

TEST(LoadMap, PaletteIsPureFunctionOfSeed) {
  MazeMap a = load_map_file(kFixtures + "/maps/maze15a.txt", 11);
  MazeMap b = load_map_file(kFixtures + "/maps/maze15a.txt", 11);
  MazeMap c = load_map_file(kFixtures + "/maps/maze15a.txt", 12);
  EXPECT_EQ(a.wall_color(0, 0), b.wall_color(0, 0));
  EXPECT_NE(a.wall_color(0, 0), c.wall_color(0, 0));
  for (double v : a.wall_color(6, 3)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(LoadMap, MissingFileReportsNotFound) {
  try {
    load_map_file("/nonexistent/map.txt", 0);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("map not found"), std::string::npos);
  }
}

TEST(Step, BlockedForwardIsNoOp) {
  MazeMap m = load_map("###\n#S#\n###\n", 1);
  EXPECT_EQ(step(m, Pose{1, 1, 0}, Action::kForward), (Pose{1, 1, 0}));
}

TEST(Step, TurnsAreInverse) {
  MazeMap m = open_room();
  const Pose p{2, 2, 0};
  EXPECT_EQ(step(m, step(m, p, Action::kTurnLeft), Action::kTurnRight), p);
  EXPECT_EQ(step(m, p, Action::kTurnLeft).heading, 1);
  EXPECT_EQ(step(m, p, Action::kTurnRight).heading, 3);
}

TEST(Step, ForwardAlongNinetyDegrees) {
  MazeMap m = open_room();
  EXPECT_EQ(step(m, Pose{2, 2, 1}, Action::kForward), (Pose{2, 3, 1}));
  EXPECT_EQ(step(m, Pose{2, 2, 0}, Action::kForward), (Pose{3, 2, 0}));
}

TEST(Render, SingleCellRoomIsRotationSymmetric) {
  MazeMap m = load_map("###\n#S#\n###\n", 5).with_uniform_palette({0.3, 0.6, 0.9});
  Renderer r(64);
  const Observation first = r.render(m, Pose{1, 1, 0});
  for (int h = 1; h < 4; ++h) EXPECT_EQ(r.render(m, Pose{1, 1, h}), first);
  for (double v : first.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Render, CenterRayShadingAtDistanceTwo) {
  MazeMap m = open_room().with_uniform_palette({1.0, 0.0, 0.0});
  // Odd ray count puts ray 32 exactly on the heading. The camera of pose
  // (4,2,0) sits on the rear edge x = 4; the wall face is at x = 6, so d = 2.
  Renderer r(65);
  const Observation obs = r.render(m, Pose{4, 2, 0});
  EXPECT_DOUBLE_EQ(obs.at(32, 0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(obs.at(32, 1), 0.0);
  EXPECT_DOUBLE_EQ(obs.at(32, 2), 0.0);
}

TEST(Render, Deterministic) {
  MazeMap a = load_map_file(kFixtures + "/maps/maze15a.txt", 7);
  MazeMap b = load_map_file(kFixtures + "/maps/maze15a.txt", 7);
  const Pose p{3, 4, 2};
  EXPECT_EQ(render(a, p), render(b, p));
  EXPECT_EQ(render(a, p).rays, kDefaultRays);
}

TEST(OracleDistance, Basics) {
  MazeMap m = load_map_file(kFixtures + "/maps/corridor_l.txt", 0);
  EXPECT_EQ(oracle_distance(m, Pose{1, 1, 0}, Pose{1, 1, 2}), 0);
  EXPECT_EQ(oracle_distance(m, Pose{1, 1, 0}, Pose{2, 1, 0}), 1);
  EXPECT_EQ(oracle_distance(m, Pose{1, 1, 0}, Pose{3, 3, 0}), 4);
}

TEST(OracleDistance, MetricPropertiesOnSampledTriples) {
  MazeMap m = load_map_file(kFixtures + "/maps/maze15a.txt", 0);
  const auto cells = m.free_cells();
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto pick = [&] {
      auto [x, y] = cells[rng.below(cells.size())];
      return Pose{x, y, 0};
    };
    const Pose a = pick(), b = pick(), c = pick();
    const int ab = oracle_distance(m, a, b), bc = oracle_distance(m, b, c), ac = oracle_distance(m, a, c);
    EXPECT_EQ(ab, oracle_distance(m, b, a));
    EXPECT_LE(ac, ab + bc);
  }
}

TEST(Simulator, DeterministicRollout) {
  auto run = [] {
    MazeMap m = load_map_file(kFixtures + "/maps/maze15b.txt", 21);
    Rng rng(99);
    Pose p = m.start();
    std::vector<double> trace;
    for (int t = 0; t < 300; ++t) {
      p = step(m, p, static_cast<Action>(rng.below(3)));
      auto o = render(m, p);
      trace.insert(trace.end(), o.values.begin(), o.values.end());
      trace.push_back(p.x * 1000 + p.y * 10 + p.heading);
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

// Poses > 3 cells apart should look more different than the most similar pair
// of headings at one cell.
TEST(Render, PositionDiscriminativeOnFixture) {
  MazeMap m = load_map_file(kFixtures + "/maps/maze15a.txt", 4);
  Renderer r;
  auto l2 = [](const Observation& a, const Observation& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s);
  };
  const auto cells = m.free_cells();
  double same_cell_min = 1e9;
  for (auto [x, y] : cells)
    for (int h = 0; h < 4; ++h)
      for (int g = h + 1; g < 4; ++g)
        same_cell_min = std::min(same_cell_min, l2(r.render(m, {x, y, h}), r.render(m, {x, y, g})));
  Rng rng(8);
  int far_pairs = 0, separated = 0;
  while (far_pairs < 2000) {
    auto [ax, ay] = cells[rng.below(cells.size())];
    auto [bx, by] = cells[rng.below(cells.size())];
    const Pose a{ax, ay, static_cast<int>(rng.below(4))}, b{bx, by, static_cast<int>(rng.below(4))};
    if (oracle_distance(m, a, b) <= 3) continue;
    ++far_pairs;
    separated += l2(r.render(m, a), r.render(m, b)) > same_cell_min;
  }
  EXPECT_GE(separated, 0.95 * far_pairs);
}

}  // namespace
}  // namespace memnav
