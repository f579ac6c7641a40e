#pragma once

// Stage drivers shared by the command line tool and the acceptance runner. Every file goes under
// the run's output directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>

#include "memnav/config.hpp"
#include "memnav/env.hpp"
#include "memnav/eval.hpp"
#include "memnav/memory.hpp"
#include "memnav/policy.hpp"
#include "memnav/reachability.hpp"
#include "memnav/rl.hpp"

namespace memnav {

namespace fs = std::filesystem;

// Relative output paths are resolved under MNAV_OUTPUT_ROOT when it is set.
inline fs::path resolve_output(const std::string& output) {
  fs::path p(output);
  if (p.is_relative()) {
    if (const char* root = std::getenv("MNAV_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return p.lexically_normal();
}

class RunDir {
 public:
  explicit RunDir(const RunConfig& cfg) : root_(resolve_output(cfg.output)) {}

  const fs::path& root() const { return root_; }
  fs::path file(const std::string& name) const { return root_ / name; }
  fs::path create(const std::string& name) const {
    fs::create_directories(root_);
    return file(name);
  }
  fs::path require(const std::string& name, const std::string& what) const {
    fs::path p = file(name);
    if (!fs::exists(p)) throw MissingCheckpoint(what + " not found at " + p.string());
    return p;
  }

  static constexpr const char* kReach = "reach.ckpt";
  static constexpr const char* kStage1Log = "stage1_log.csv";
  static constexpr const char* kStage2Policy = "stage2_policy.ckpt";
  static constexpr const char* kStage2Log = "stage2_log.csv";
  static constexpr const char* kStage2Memory = "stage2_memory.jsonl";
  static constexpr const char* kStage3Policy = "stage3_policy.ckpt";
  static constexpr const char* kStage3Log = "stage3_log.csv";
  static constexpr const char* kEvalResults = "eval_results.csv";
  static constexpr const char* kEvalSummary = "eval_summary.json";
  static constexpr const char* kRandomResults = "eval_random_results.csv";
  static constexpr const char* kRandomSummary = "eval_random_summary.json";

 private:
  fs::path root_;
};

inline std::ofstream open_output(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + p.string());
  return out;
}

inline void save_config(const RunDir& dir, const RunConfig& cfg, const std::string& name) {
  auto out = open_output(dir.create(name));
  out << to_json(cfg).dump(2) << '\n';
}

inline MazeMap load_run_map(const RunConfig& cfg) { return load_map_file(cfg.map, cfg.map_seed); }

inline ReachabilityModel load_reach(const RunDir& dir, const RunConfig& cfg) {
  ReachabilityModel m(cfg.rays, 0);
  m.load(dir.require(RunDir::kReach, "reachability checkpoint (run stage1 first)").string());
  return m;
}

inline std::uint64_t stage_seed(const RunConfig& cfg, std::uint64_t tag) { return Rng::mix(cfg.seed ^ Rng::mix(tag)); }

struct Stage1Result {
  double holdout_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::size_t pairs = 0;
};

inline Stage1Result run_stage1(const RunConfig& cfg, std::ostream& log) {
  const RunDir dir(cfg);
  const MazeMap map = load_run_map(cfg);
  save_config(dir, cfg, "stage1_config.json");
  const auto walks = collect_walks(map, cfg.pairing, stage_seed(cfg, 11), cfg.rays);
  const auto pairs = sample_pairs(walks, cfg.pairing, stage_seed(cfg, 12));
  ReachTrainConfig rc = cfg.reach;
  rc.seed = stage_seed(cfg, 13);
  auto csv = open_output(dir.create(RunDir::kStage1Log));
  csv << "epoch,train_loss,train_accuracy,holdout_loss,holdout_accuracy\n" << std::setprecision(17);
  ReachTrainReport report;
  ReachabilityModel model = train_reachability(pairs, rc, &report, [&](const EpochLog& e) {
    csv << e.epoch << ',' << e.train.loss << ',' << e.train.accuracy << ',' << e.holdout.loss << ',' << e.holdout.accuracy << '\n';
    log << "epoch " << e.epoch << " train acc " << e.train.accuracy << " holdout acc " << e.holdout.accuracy << '\n';
  });
  model.save(dir.create(RunDir::kReach).string());
  Stage1Result r;
  r.pairs = pairs.size();
  if (!report.epochs.empty()) {
    r.holdout_accuracy = report.epochs.back().holdout.accuracy;
    r.train_accuracy = report.epochs.back().train.accuracy;
  }
  return r;
}

inline RewardConfig stage_reward(const RunConfig& cfg, const StageConfig& st) {
  RewardConfig rc = cfg.reward;
  rc.mode = st.mode;
  return rc;
}

inline std::string batch_checkpoint_name(const std::string& stage, int batch) {
  std::ostringstream s;
  s << stage << "_batch_" << std::setw(5) << std::setfill('0') << batch << ".ckpt";
  return s.str();
}

// Trains one stage, writing its log, periodic checkpoints and final policy.
inline StageResult run_policy_stage(const RunConfig& cfg, int stage, std::ostream& log) {
  const RunDir dir(cfg);
  const MazeMap map = load_run_map(cfg);
  const ReachabilityModel reach = load_reach(dir, cfg);
  const StageConfig& st = stage == 2 ? cfg.stage2 : cfg.stage3;
  const RewardConfig rc = stage_reward(cfg, st);
  const std::string name = "stage" + std::to_string(stage);
  if ((stage == 2) == is_navigation(rc.mode)) throw ModeMismatch(name + " cannot train with reward " + mode_name(rc.mode));

  PolicyNet net(cfg.rays, stage_seed(cfg, 21));
  if (stage == 3) net.load(dir.require(RunDir::kStage2Policy, "stage-2 policy checkpoint (run stage2 first)").string());
  save_config(dir, cfg, name + "_config.json");

  auto csv = open_output(dir.create(stage == 2 ? RunDir::kStage2Log : RunDir::kStage3Log));
  csv << kTrainingLogHeader << '\n';
  auto on_batch = [&](const BatchLog& b, const std::vector<EpisodeTrace>&) {
    write_log_row(csv, b);
    csv.flush();
    log << name << " batch " << b.batch << " return " << b.mean_return << " coverage " << b.coverage_cells << " buffer "
        << b.buffer_size << '\n';
    if (st.checkpoint_every > 0 && (b.batch + 1) % st.checkpoint_every == 0 && b.batch + 1 < st.ppo.batches) {
      net.save(dir.create(batch_checkpoint_name(name, b.batch + 1)).string());
    }
  };
  const std::uint64_t seed = stage_seed(cfg, static_cast<std::uint64_t>(20 + stage));
  StageResult result = stage == 2 ? run_stage2(map, reach, net, rc, st.ppo, seed, on_batch)
                                  : run_stage3(map, reach, net, rc, st.ppo, seed, on_batch);
  net.save(dir.create(stage == 2 ? RunDir::kStage2Policy : RunDir::kStage3Policy).string());
  if (stage == 2 && !result.last_batch.empty()) {
    const EpisodeTrace& last = result.last_batch.back();
    auto out = open_output(dir.create(RunDir::kStage2Memory));
    dump_memory_jsonl(out, last.memory.buffer(), last.memory.graph(), &last.entry_poses);
  }
  return result;
}

struct EvalRunResult {
  std::vector<GoalOutcome> results;
  nlohmann::ordered_json summary;
};

// random == true evaluates the uniform-action baseline and needs no policy.
inline EvalRunResult run_eval(const RunConfig& cfg, bool random, const std::string& policy_path = {}) {
  const RunDir dir(cfg);
  const MazeMap map = load_run_map(cfg);
  const ReachabilityModel reach = load_reach(dir, cfg);
  const auto goals = make_goal_set(map, cfg.goals, cfg.rays);
  EvalConfig ec = cfg.eval;
  ec.tau = cfg.reward.tau;
  EvalRunResult r;
  if (random) {
    r.results = evaluate_navigation(map, reach, nullptr, goals, ec);
  } else {
    PolicyNet net(cfg.rays, 0);
    const fs::path p = policy_path.empty() ? dir.require(RunDir::kStage3Policy, "stage-3 policy checkpoint (run stage3 first)") : fs::path(policy_path);
    if (!fs::exists(p)) throw MissingCheckpoint("policy checkpoint not found at " + p.string());
    net.load(p.string());
    r.results = evaluate_navigation(map, reach, &net, goals, ec);
  }
  const auto edges = default_distance_edges(r.results);
  r.summary = summary_json(r.results, edges);
  {
    auto out = open_output(dir.create(random ? RunDir::kRandomResults : RunDir::kEvalResults));
    write_results_csv(out, r.results);
  }
  auto out = open_output(dir.create(random ? RunDir::kRandomSummary : RunDir::kEvalSummary));
  out << r.summary.dump(2) << '\n';
  return r;
}

struct ReplayResult {
  int episodes = 0;
  int failures = 0;
  std::size_t entries = 0, pairs_checked = 0;
};

// Fresh stage-2 episodes with the trained explorer, each checked by replay.
inline ReplayResult run_replay(const RunConfig& cfg, int episodes, std::ostream& log) {
  const RunDir dir(cfg);
  const MazeMap map = load_run_map(cfg);
  const ReachabilityModel reach = load_reach(dir, cfg);
  PolicyNet net(cfg.rays, 0);
  net.load(dir.require(RunDir::kStage2Policy, "stage-2 policy checkpoint (run stage2 first)").string());
  const RewardConfig rc = stage_reward(cfg, cfg.stage2);
  RolloutWorker w(map, reach, cfg.rays);
  ReplayResult r;
  for (int e = 0; e < episodes; ++e) {
    const auto trace = run_exploration_episode(w, &net, rc, cfg.stage2.ppo.steps_explore, episode_seed(stage_seed(cfg, 31), 0, static_cast<std::uint64_t>(e)));
    const TraceCheck c = check_trace(trace, reach, rc);
    ++r.episodes;
    r.entries += c.entries;
    r.pairs_checked += c.pairs_checked;
    if (!c.ok()) ++r.failures;
    log << "episode " << e << " entries " << c.entries << " separation violations " << c.separation_violations << " buffer replay "
        << (c.buffer_replay_identical ? "identical" : "DIFFERS") << " graph replay " << (c.graph_replay_identical ? "identical" : "DIFFERS")
        << " reward replay " << (c.rewards_replay_identical ? "identical" : "DIFFERS") << '\n';
  }
  return r;
}

}  // namespace memnav
