#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "memnav/config.hpp"
#include "memnav/plot.hpp"

namespace memnav {
namespace {

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c = load_config("");
  EXPECT_EQ(c.stage2.mode, RewardMode::kCuriosityDiscrete);
  EXPECT_EQ(c.stage3.mode, RewardMode::kNavSparsePlusDense);
  EXPECT_EQ(c.stage2.ppo.workers, 1);
  const RunConfig again = load_config(to_json(c).dump());
  EXPECT_EQ(to_json(again), to_json(c));
}

TEST(Config, FileValuesAndOverrides) {
  const RunConfig c = load_config(R"({"seed": 7, "stage2": {"reward": "continuous", "ppo": {"learning_rate": 1}}})",
                                  {"stage2.ppo.batches=12", "reward.tau=0.6", "output=runs/x", "stage3.reward=sparse"});
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.stage2.mode, RewardMode::kCuriosityContinuous);
  EXPECT_EQ(c.stage2.ppo.learning_rate, 1.0);
  EXPECT_EQ(c.stage2.ppo.batches, 12);
  EXPECT_EQ(c.reward.tau, 0.6);
  EXPECT_EQ(c.eval.tau, 0.6);
  EXPECT_EQ(c.output, "runs/x");
  EXPECT_EQ(c.stage3.mode, RewardMode::kNavSparse);
  EXPECT_EQ(c.stage3.ppo.batches, RunConfig{}.stage3.ppo.batches);
}

TEST(Config, StrictParsing) {
  EXPECT_THROW(load_config(R"({"sed": 7})"), ConfigError);
  EXPECT_THROW(load_config(R"({"stage2": {"ppo": {"lr": 1}}})"), ConfigError);
  EXPECT_THROW(load_config(R"({"seed": "seven"})"), ConfigError);
  EXPECT_THROW(load_config(R"({"stage2": 3})"), ConfigError);
  EXPECT_THROW(load_config(R"({"stage2": {"ppo": {"batches": 2.5}}})"), ConfigError);
  EXPECT_THROW(load_config("{not json"), ConfigError);
  EXPECT_THROW(load_config("", {"stage2.ppo.nope=1"}), ConfigError);
  EXPECT_THROW(load_config("", {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(load_config("", {"stage2..ppo=1"}), ConfigError);
  EXPECT_THROW(load_config("", {"stage2.reward=curious"}), ConfigError);
  EXPECT_THROW(load_config("", {"reward.tau=1.5"}), ConfigError);
  EXPECT_THROW(load_config("", {"stage3.ppo.clip=0"}), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent/config.json"), ConfigError);
}

TEST(Csv, ReadsAndRejects) {
  std::istringstream good("a,b\n1,2\n3,4\n");
  const CsvTable t = read_csv(good);
  EXPECT_EQ(t.numbers("b"), (std::vector<double>{2, 4}));
  EXPECT_THROW(t.column("c"), MalformedLog);

  std::istringstream empty("");
  EXPECT_THROW(read_csv(empty), MalformedLog);
  std::istringstream header_only("a,b\n");
  EXPECT_THROW(read_csv(header_only), MalformedLog);
  std::istringstream ragged("a,b\n1\n");
  EXPECT_THROW(read_csv(ragged), MalformedLog);
  std::istringstream text("a,b\n1,x\n");
  const CsvTable bad = read_csv(text);
  EXPECT_THROW(bad.numbers("b"), MalformedLog);
}

std::size_t count(const std::string& s, const std::string& pattern) {
  const std::regex re(pattern);
  return static_cast<std::size_t>(std::distance(std::sregex_iterator(s.begin(), s.end(), re), std::sregex_iterator()));
}

TEST(Plot, LinePlotIsDeterministic) {
  const std::vector<Series> s{{"discrete", {0, 1, 2}, {10, 30, 35}}, {"continuous", {0, 1, 2}, {10, 12, 9}}};
  const std::string a = line_plot_svg("coverage", "batch", "cells", s);
  EXPECT_EQ(a, line_plot_svg("coverage", "batch", "cells", s));
  EXPECT_EQ(count(a, "class=\"series\""), 2u);
  EXPECT_EQ(a.rfind("<svg", 0), 0u);
  EXPECT_NE(a.find("</svg>"), std::string::npos);
}

TEST(Plot, GraphHasOneElementPerEdge) {
  std::ostringstream dump;
  for (int i = 0; i < 6; ++i) dump << R"({"type":"entry","index":)" << i << R"(,"insert_step":)" << i * 3 << R"(,"pose":[)" << i << ",1,0]}\n";
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 1}, {2, 3}, {3, 4}, {4, 5}, {5, 0}};
  for (auto [a, b] : edges) dump << R"({"type":"edge","from":)" << a << R"(,"to":)" << b << "}\n";
  std::istringstream in(dump.str());
  const GraphDump g = read_graph_dump(in);
  const std::string svg = graph_svg("graph", g);
  EXPECT_EQ(count(svg, "class=\"edge\""), edges.size());
  EXPECT_EQ(count(svg, "class=\"node\""), 6u);
  std::istringstream in2(dump.str());
  EXPECT_EQ(graph_svg("graph", read_graph_dump(in2)), svg);
}

TEST(Plot, GraphWithoutPosesAndBadDumps) {
  std::istringstream no_pose(R"({"type":"entry","index":0,"insert_step":0}
{"type":"entry","index":1,"insert_step":4}
{"type":"edge","from":0,"to":1}
)");
  EXPECT_EQ(count(graph_svg("g", read_graph_dump(no_pose)), "class=\"edge\""), 1u);
  std::istringstream empty("");
  EXPECT_THROW(read_graph_dump(empty), MalformedLog);
  std::istringstream garbage("hello\n");
  EXPECT_THROW(read_graph_dump(garbage), MalformedLog);
  std::istringstream dangling(R"({"type":"entry","index":0,"insert_step":0}
{"type":"edge","from":0,"to":3}
)");
  EXPECT_THROW(graph_svg("g", read_graph_dump(dangling)), MalformedLog);
}

TEST(Plot, Bars) {
  const std::vector<BarGroup> groups{{"(0,5]", {0.5, 0.25}}, {"(5,10]", {0.3, 0.1}}};
  const std::string svg = bar_plot_svg("spl", "SPL", {"dense", "sparse"}, groups);
  EXPECT_EQ(count(svg, "class=\"bar\""), 4u);
  EXPECT_EQ(svg, bar_plot_svg("spl", "SPL", {"dense", "sparse"}, groups));
}

}  // namespace
}  // namespace memnav
