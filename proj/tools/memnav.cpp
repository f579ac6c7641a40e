#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memnav/pipeline.hpp"
#include "memnav/plot.hpp"

namespace fs = std::filesystem;
using namespace memnav;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string map, output;
  long long seed = -1;

  RunConfig load() const {
    std::vector<std::string> o = overrides;
    if (!map.empty()) o.push_back("map=\"" + map + "\"");
    if (!output.empty()) o.push_back("output=\"" + output + "\"");
    if (seed >= 0) o.push_back("seed=" + std::to_string(seed));
    return config.empty() ? load_config("", o) : load_config_file(config, o);
  }
};

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + p.string());
  out << text;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedLog("log not found: " + path);
  return read_csv(in);
}

std::string series_name(const std::string& path) {
  const fs::path p(path);
  const std::string parent = p.parent_path().filename().string();
  return parent.empty() ? p.stem().string() : parent + "/" + p.stem().string();
}

int plot(const RunDir& dir, const std::vector<std::string>& logs, const std::vector<std::string>& summaries, const std::string& graph) {
  if (logs.empty() && summaries.empty() && graph.empty()) throw ConfigError("plot: nothing to plot (give --log, --summary or --graph)");
  if (!logs.empty()) {
    std::vector<Series> coverage, reward;
    for (const auto& path : logs) {
      const CsvTable t = read_csv_file(path);
      const auto x = t.numbers("batch");
      coverage.push_back({series_name(path), x, t.numbers("coverage_cells")});
      reward.push_back({series_name(path), x, t.numbers("mean_return")});
    }
    write_file(dir.file("coverage.svg"), line_plot_svg("Coverage during training", "batch", "cells visited per episode", coverage));
    write_file(dir.file("reward.svg"), line_plot_svg("Return during training", "batch", "mean episode return", reward));
    std::cout << "wrote " << dir.file("coverage.svg").string() << " and " << dir.file("reward.svg").string() << '\n';
  }
  if (!summaries.empty()) {
    std::vector<std::string> names;
    std::map<std::pair<int, int>, std::vector<double>> bins;
    for (std::size_t k = 0; k < summaries.size(); ++k) {
      std::ifstream in(summaries[k]);
      if (!in) throw MalformedLog("summary not found: " + summaries[k]);
      const auto j = nlohmann::json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("bins")) throw MalformedLog("not an eval summary: " + summaries[k]);
      names.push_back(series_name(summaries[k]));
      for (const auto& b : j.at("bins")) {
        auto& v = bins[{b.at("lo").get<int>(), b.at("hi").get<int>()}];
        v.resize(summaries.size(), 0.0);
        v[k] = b.at("spl").get<double>();
      }
    }
    std::vector<BarGroup> groups;
    for (auto& [range, v] : bins) {
      v.resize(summaries.size(), 0.0);
      groups.push_back({"(" + std::to_string(range.first) + "," + std::to_string(range.second) + "]", v});
    }
    write_file(dir.file("spl_by_distance.svg"), bar_plot_svg("SPL by shortest distance", "SPL", names, groups));
    std::cout << "wrote " << dir.file("spl_by_distance.svg").string() << '\n';
  }
  if (!graph.empty()) {
    std::ifstream in(graph);
    if (!in) throw MalformedLog("graph dump not found: " + graph);
    write_file(dir.file("graph.svg"), graph_svg("Exploration graph", read_graph_dump(in)));
    std::cout << "wrote " << dir.file("graph.svg").string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memnav: curiosity-driven exploration and image-goal navigation in grid mazes"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("-c,--config", common.config, "JSON run configuration");
  app.add_option("--set", common.overrides, "override a config key, e.g. --set stage2.ppo.batches=20");
  app.add_option("--map", common.map, "maze map file");
  app.add_option("--output", common.output, "output directory (relative paths go under $MNAV_OUTPUT_ROOT)");
  app.add_option("--seed", common.seed, "run seed")->check(CLI::NonNegativeNumber);

  auto* s1 = app.add_subcommand("stage1", "collect walks and train the reachability network");
  std::string reward2, reward3;
  auto* s2 = app.add_subcommand("stage2", "train the exploration policy");
  s2->add_option("--reward", reward2, "discrete | continuous | oracle_coverage");
  auto* s3 = app.add_subcommand("stage3", "train the navigation policy");
  s3->add_option("--reward", reward3, "sparse | dense | oracle_distance");
  bool random = false;
  std::string policy;
  auto* ev = app.add_subcommand("eval", "image-goal evaluation of the stage-3 policy");
  ev->add_flag("--random", random, "evaluate the uniform random baseline instead");
  ev->add_option("--policy", policy, "policy checkpoint (default: the run's stage-3 policy)");
  std::vector<std::string> logs, summaries;
  std::string graph;
  auto* pl = app.add_subcommand("plot", "render SVG plots from logs");
  pl->add_option("--log", logs, "training log CSV (repeatable)");
  pl->add_option("--summary", summaries, "eval summary JSON (repeatable)");
  pl->add_option("--graph", graph, "memory JSON-lines dump");
  int episodes = 20;
  auto* rp = app.add_subcommand("replay", "rerun stage-2 episodes and verify them by replay");
  rp->add_option("--episodes", episodes, "episodes to check")->check(CLI::PositiveNumber);
  auto* cf = app.add_subcommand("config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  RunConfig cfg;
  try {
    std::vector<std::string> extra;
    if (!reward2.empty()) extra.push_back("stage2.reward=" + reward2);
    if (!reward3.empty()) extra.push_back("stage3.reward=" + reward3);
    Common c = common;
    c.overrides.insert(c.overrides.end(), extra.begin(), extra.end());
    cfg = c.load();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const RunDir dir(cfg);
    if (*cf) {
      std::cout << to_json(cfg).dump(2) << '\n';
    } else if (*s1) {
      const auto r = run_stage1(cfg, std::cerr);
      std::cout << "pairs " << r.pairs << " train accuracy " << r.train_accuracy << " holdout accuracy " << r.holdout_accuracy << '\n';
      std::cout << "checkpoint " << dir.file(RunDir::kReach).string() << '\n';
    } else if (*s2 || *s3) {
      const int stage = *s2 ? 2 : 3;
      const auto r = run_policy_stage(cfg, stage, std::cerr);
      if (!r.logs.empty()) {
        const BatchLog& b = r.logs.back();
        std::cout << "final batch return " << b.mean_return << " coverage " << b.coverage_cells << '\n';
      }
      std::cout << "checkpoint " << dir.file(stage == 2 ? RunDir::kStage2Policy : RunDir::kStage3Policy).string() << '\n';
    } else if (*ev) {
      const auto r = run_eval(cfg, random, policy);
      std::cout << "success_rate " << r.summary["success_rate"].get<double>() << " spl " << r.summary["spl"].get<double>() << '\n';
    } else if (*pl) {
      return plot(dir, logs, summaries, graph);
    } else if (*rp) {
      const auto r = run_replay(cfg, episodes, std::cout);
      std::cout << r.episodes << " episodes, " << r.entries << " entries, " << r.pairs_checked << " pairs checked, " << r.failures << " failed\n";
      return r.failures == 0 ? 0 : kExitRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
