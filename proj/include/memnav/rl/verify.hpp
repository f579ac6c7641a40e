#pragma once

// Post-hoc checks on a finished episode.

#include <string>
#include <vector>

#include "memnav/memory.hpp"
#include "memnav/reachability.hpp"
#include "memnav/rl/rollout.hpp"

namespace memnav {

struct TraceCheck {
  std::size_t entries = 0;
  std::size_t pairs_checked = 0;
  std::size_t separation_violations = 0;  // stored entry j scored >= tau against an earlier entry
  bool buffer_replay_identical = false;
  bool graph_replay_identical = false;
  bool rewards_replay_identical = true;  // vacuous for oracle modes

  bool ok() const { return separation_violations == 0 && buffer_replay_identical && graph_replay_identical && rewards_replay_identical; }
};

inline TraceCheck check_trace(const EpisodeTrace& trace, const ReachabilityModel& model, const RewardConfig& rc) {
  TraceCheck c;
  const MemoryBuffer& buf = trace.memory.buffer();
  c.entries = buf.size();
  for (std::size_t j = 1; j < buf.size(); ++j) {
    for (std::size_t i = 0; i < j; ++i, ++c.pairs_checked) {
      if (!(compare(model, buf[j].embedding, buf[i].embedding) < rc.tau)) ++c.separation_violations;
    }
  }
  ReachabilityScorer scorer(model);
  const EpisodicMemory again = replay_memory(trace, scorer, rc.tau);
  c.buffer_replay_identical = again.buffer().size() == buf.size();
  for (std::size_t j = 0; c.buffer_replay_identical && j < buf.size(); ++j) {
    c.buffer_replay_identical = again.buffer()[j].insert_step == buf[j].insert_step && again.buffer()[j].embedding == buf[j].embedding;
  }
  c.graph_replay_identical = again.graph().edges() == trace.memory.graph().edges();
  if (!is_oracle(rc.mode)) {
    const auto rewards = replay_rewards(trace, model, rc);
    for (std::size_t k = 0; k < rewards.size(); ++k) c.rewards_replay_identical = c.rewards_replay_identical && rewards[k] == trace.steps[k].reward;
  }
  return c;
}

}  // namespace memnav
