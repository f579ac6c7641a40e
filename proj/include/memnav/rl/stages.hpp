#pragma once

// Training loops for the exploration head (stage 2) and the navigation head (stage 3).

#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <ostream>
#include <thread>
#include <vector>

#include "memnav/env.hpp"
#include "memnav/policy.hpp"
#include "memnav/reachability.hpp"
#include "memnav/rl/ppo.hpp"
#include "memnav/rl/rewards.hpp"
#include "memnav/rl/rollout.hpp"

namespace memnav {

struct BatchLog {
  int batch = 0;
  RewardMode mode = RewardMode::kCuriosityDiscrete;
  double mean_return = 0.0;
  double coverage_cells = 0.0;
  double buffer_size = 0.0;
  double graph_edges = 0.0;
  UpdateStats stats;
};

inline const char* kTrainingLogHeader =
    "batch,mode,mean_return,coverage_cells,buffer_size,graph_edges,policy_loss,value_loss,entropy,clip_fraction";

inline void write_log_row(std::ostream& out, const BatchLog& log) {
  const auto old = out.precision(17);
  out << log.batch << ',' << mode_name(log.mode) << ',' << log.mean_return << ',' << log.coverage_cells << ','
      << log.buffer_size << ',' << log.graph_edges << ',' << log.stats.policy_loss << ',' << log.stats.value_loss << ','
      << log.stats.entropy << ',' << log.stats.clip_fraction << '\n';
  out.precision(old);
}

inline BatchLog summarize_batch(int batch, RewardMode mode, const std::vector<EpisodeTrace>& traces) {
  BatchLog log;
  log.batch = batch;
  log.mode = mode;
  if (traces.empty()) return log;
  for (const auto& tr : traces) {
    log.mean_return += tr.total_reward();
    log.coverage_cells += tr.coverage;
    log.buffer_size += static_cast<double>(tr.memory.buffer().size());
    log.graph_edges += static_cast<double>(tr.memory.graph().edges().size());
  }
  const auto n = static_cast<double>(traces.size());
  log.mean_return /= n;
  log.coverage_cells /= n;
  log.buffer_size /= n;
  log.graph_edges /= n;
  return log;
}

inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t batch, std::uint64_t episode) {
  return Rng::mix(Rng::mix(seed ^ 0x5eedULL) ^ Rng::mix(batch * 0x10001ULL + episode));
}

// Worker pool; episode e of a batch runs on worker e % N and traces come back in episode order.
class RolloutPool {
 public:
  RolloutPool(const MazeMap& map, const ReachabilityModel& reach, int rays, int workers) {
    for (int i = 0; i < std::max(1, workers); ++i) workers_.push_back(std::make_unique<RolloutWorker>(map, reach, rays));
  }

  std::size_t size() const { return workers_.size(); }
  RolloutWorker& worker(std::size_t i) { return *workers_.at(i); }

  std::vector<EpisodeTrace> run(int episodes, const std::function<EpisodeTrace(RolloutWorker&, int)>& episode) {
    std::vector<EpisodeTrace> out(static_cast<std::size_t>(episodes));
    for (auto& w : workers_) w->clear_features();
    auto job = [&](std::size_t wi) {
      for (int e = static_cast<int>(wi); e < episodes; e += static_cast<int>(workers_.size())) {
        out[static_cast<std::size_t>(e)] = episode(*workers_[wi], e);
      }
    };
    if (workers_.size() == 1) {
      job(0);
      return out;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers_.size());
    for (std::size_t wi = 0; wi < workers_.size(); ++wi) {
      threads.emplace_back([&, wi] {
        try {
          job(wi);
        } catch (...) {
          errors[wi] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    return out;
  }

 private:
  std::vector<std::unique_ptr<RolloutWorker>> workers_;
};

struct StageResult {
  std::vector<BatchLog> logs;
  std::vector<EpisodeTrace> last_batch;
};

using BatchCallback = std::function<void(const BatchLog&, const std::vector<EpisodeTrace>&)>;

// Trains the exploration head with a curiosity or coverage-oracle reward. The reachability model stays frozen.
inline StageResult run_stage2(const MazeMap& map, const ReachabilityModel& reach, PolicyNet& net, const RewardConfig& rc,
                              const PPOConfig& cfg, std::uint64_t seed, const BatchCallback& on_batch = {}) {
  rc.validate();
  if (is_navigation(rc.mode)) throw ModeMismatch(std::string("stage 2 needs an exploration reward, got ") + mode_name(rc.mode));
  PPOConfig pc = cfg;
  pc.train_cnn = true;
  PPOTrainer trainer(net, HeadKind::kExplore, pc, Rng::mix(seed ^ 0x2222));
  RolloutPool pool(map, reach, net.rays(), cfg.workers);
  StageResult result;
  for (int b = 0; b < cfg.batches; ++b) {
    auto traces = pool.run(cfg.episodes_per_batch, [&](RolloutWorker& w, int e) {
      return run_exploration_episode(w, &net, rc, cfg.steps_explore, episode_seed(seed, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(e)));
    });
    BatchLog log = summarize_batch(b, rc.mode, traces);
    log.stats = trainer.update(traces);
    if (on_batch) on_batch(log, traces);
    result.logs.push_back(log);
    if (b + 1 == cfg.batches) result.last_batch = std::move(traces);
  }
  return result;
}

// Trains the navigation head; the exploration head is frozen and the CNN follows cfg.train_cnn.
inline StageResult run_stage3(const MazeMap& map, const ReachabilityModel& reach, PolicyNet& net, const RewardConfig& rc,
                              const PPOConfig& cfg, std::uint64_t seed, const BatchCallback& on_batch = {}) {
  rc.validate();
  if (!is_navigation(rc.mode)) throw ModeMismatch(std::string("stage 3 needs a navigation reward, got ") + mode_name(rc.mode));
  PPOTrainer trainer(net, HeadKind::kNavigate, cfg, Rng::mix(seed ^ 0x3333));
  RolloutPool pool(map, reach, net.rays(), cfg.workers);
  StageResult result;
  for (int b = 0; b < cfg.batches; ++b) {
    auto traces = pool.run(cfg.episodes_per_batch, [&](RolloutWorker& w, int e) {
      const auto s = episode_seed(seed, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(e));
      try {
        return run_navigation_episode(w, net, rc, cfg.steps_explore, cfg.steps_nav, s);
      } catch (const EmptyBufferAfterExploration& err) {
        std::cerr << "warning: episode " << e << " of batch " << b << " skipped: " << err.what() << '\n';
        return EpisodeTrace{};
      }
    });
    BatchLog log = summarize_batch(b, rc.mode, traces);
    log.stats = trainer.update(traces);
    if (on_batch) on_batch(log, traces);
    result.logs.push_back(log);
    if (b + 1 == cfg.batches) result.last_batch = std::move(traces);
  }
  return result;
}

}  // namespace memnav
