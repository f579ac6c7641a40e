#pragma once

// Scene memory buffer, exploration graph and temporal age embeddings.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memnav/autodiff.hpp"
#include "memnav/error.hpp"
#include "memnav/observation_store.hpp"
#include "memnav/reachability.hpp"

namespace memnav {

inline constexpr double kEmptyNovelty = -std::numeric_limits<double>::infinity();
inline constexpr ObsId kNoObs = std::numeric_limits<ObsId>::max();

struct MemoryEntry {
  std::vector<double> embedding;
  int insert_step = 0;
  ObsId obs = kNoObs;  // interned observation, lets scorers memoize
};

class MemoryBuffer {
 public:
  explicit MemoryBuffer(double tau = 0.5) : tau_(tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("memory: tau must lie in (0,1)");
  }

  double tau() const { return tau_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const MemoryEntry& operator[](std::size_t j) const { return entries_.at(j); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  void append(MemoryEntry e) {
    if (!entries_.empty() && e.insert_step <= entries_.back().insert_step) {
      throw InvalidIndex("memory: insert_step must increase strictly");
    }
    entries_.push_back(std::move(e));
  }

 private:
  double tau_;
  std::vector<MemoryEntry> entries_;
};

struct Novelty {
  double score = kEmptyNovelty;
  int argmax = -1;  // lowest index among ties; -1 when the buffer is empty
};

// Max over entries of score_of(j); ties go to the lower index.
template <class ScoreOf>
Novelty scan_novelty(std::size_t count, ScoreOf&& score_of) {
  Novelty n;
  for (std::size_t j = 0; j < count; ++j) {
    const double s = score_of(j);
    if (s > n.score) {
      n.score = s;
      n.argmax = static_cast<int>(j);
    }
  }
  return n;
}

inline double novelty_score(const ReachabilityModel& model, std::span<const double> e_t, const MemoryBuffer& buf) {
  return scan_novelty(buf.size(), [&](std::size_t j) { return compare(model, e_t, buf[j].embedding); }).score;
}

// Appends e_t iff score < tau (strict).
inline bool smb_update(MemoryBuffer& buf, std::span<const double> e_t, int t, double score, ObsId obs = kNoObs) {
  if (!(score < buf.tau())) return false;
  buf.append({std::vector<double>(e_t.begin(), e_t.end()), t, obs});
  return true;
}

class ExplorationGraph {
 public:
  std::size_t node_count() const { return nodes_; }
  void add_node() { ++nodes_; adjacency_.emplace_back(); }
  std::optional<int> anchor() const { return anchor_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& successors(int node) const { return adjacency_.at(static_cast<std::size_t>(check(node))); }

  bool has_edge(int from, int to) const { return edge_set_.count({from, to}) > 0; }

  // Returns true if the edge is new.
  bool add_edge(int from, int to) {
    check(from);
    check(to);
    if (from == to || !edge_set_.insert({from, to}).second) return false;
    edges_.emplace_back(from, to);
    adjacency_[static_cast<std::size_t>(from)].push_back(to);
    return true;
  }

  // Moves the anchor; adds (previous -> anchor) when it changes. Returns true if an edge was added.
  bool set_anchor(int node) {
    check(node);
    const auto prev = anchor_;
    anchor_ = node;
    return prev && *prev != node && add_edge(*prev, node);
  }

  void clear() {
    nodes_ = 0;
    anchor_.reset();
    edges_.clear();
    edge_set_.clear();
    adjacency_.clear();
  }

 private:
  int check(int node) const {
    if (node < 0 || static_cast<std::size_t>(node) >= nodes_) {
      throw InvalidIndex("graph: node " + std::to_string(node) + " outside [0," + std::to_string(nodes_) + ")");
    }
    return node;
  }

  std::size_t nodes_ = 0;
  std::optional<int> anchor_;
  std::vector<std::pair<int, int>> edges_;
  std::set<std::pair<int, int>> edge_set_;
  std::vector<std::vector<int>> adjacency_;
};

inline void sync_nodes(ExplorationGraph& graph, const MemoryBuffer& buf) {
  while (graph.node_count() < buf.size()) graph.add_node();
}

// Anchor is the newest entry when e_t was just inserted, otherwise the argmax comparator score.
inline int update_anchor(ExplorationGraph& graph, const MemoryBuffer& buf, const ReachabilityModel& model,
                         std::span<const double> e_t, bool inserted) {
  if (buf.empty()) throw EmptyBuffer("update_anchor: buffer is empty");
  sync_nodes(graph, buf);
  const int anchor = inserted ? static_cast<int>(buf.size()) - 1
                              : scan_novelty(buf.size(), [&](std::size_t j) { return compare(model, e_t, buf[j].embedding); }).argmax;
  graph.set_anchor(anchor);
  return anchor;
}

inline std::optional<int> shortest_path_len(const ExplorationGraph& graph, int from, int to) {
  const auto n = graph.node_count();
  for (int v : {from, to}) {
    if (v < 0 || static_cast<std::size_t>(v) >= n) throw InvalidIndex("shortest_path_len: node " + std::to_string(v));
  }
  if (from == to) return 0;
  std::vector<int> dist(n, -1);
  std::deque<int> queue{from};
  dist[static_cast<std::size_t>(from)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : graph.successors(u)) {
      if (dist[static_cast<std::size_t>(v)] >= 0) continue;
      dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
      if (v == to) return dist[static_cast<std::size_t>(v)];
      queue.push_back(v);
    }
  }
  return std::nullopt;
}

// One observation's effect on buffer and graph.
struct MemoryStep {
  double score = kEmptyNovelty;
  bool inserted = false;
  int anchor = -1;
  bool edge_added = false;
};

// Buffer + graph for one episode, scored through a memoizing scorer.
class EpisodicMemory {
 public:
  EpisodicMemory() : buffer_(0.5) {}
  explicit EpisodicMemory(double tau) : buffer_(tau) {}

  const MemoryBuffer& buffer() const { return buffer_; }
  const ExplorationGraph& graph() const { return graph_; }

  void reset() {
    buffer_.clear();
    graph_.clear();
  }

  MemoryStep observe(ReachabilityScorer& scorer, ObsId obs, int t) {
    MemoryStep s;
    const Novelty nov = scan_novelty(buffer_.size(), [&](std::size_t j) { return scorer.score(obs, buffer_[j].obs); });
    s.score = nov.score;
    s.inserted = smb_update(buffer_, scorer.embedding(obs), t, nov.score, obs);
    sync_nodes(graph_, buffer_);
    s.anchor = s.inserted ? static_cast<int>(buffer_.size()) - 1 : nov.argmax;
    s.edge_added = graph_.set_anchor(s.anchor);
    return s;
  }

  // Graph distance from the current anchor to entry `goal`.
  std::optional<int> distance_to(int goal) const {
    if (!graph_.anchor()) throw EmptyBuffer("distance_to: no anchor yet");
    return shortest_path_len(graph_, *graph_.anchor(), goal);
  }

 private:
  MemoryBuffer buffer_;
  ExplorationGraph graph_;
};

// Learned vectors per age bucket. Bucket 0 is age 0, buckets 1..n-2 split [1, max_age) geometrically,
// the last bucket holds every age >= max_age.
class AgeEmbeddingTable {
 public:
  static constexpr std::size_t kBuckets = 32;

  AgeEmbeddingTable(const std::string& name, std::size_t dim, int max_age, Rng& rng)
      : max_age_(max_age), table_(name, kBuckets, dim, rng) {
    if (max_age < 2) throw ConfigError("age table: max_age must be >= 2");
  }

  std::size_t dim() const { return table_.dim(); }
  int max_age() const { return max_age_; }
  ad::Embedding& table() { return table_; }
  const ad::Embedding& table() const { return table_; }

  std::size_t bucket(int age) const {
    if (age < 0) throw InvalidIndex("age table: negative age");
    if (age == 0) return 0;
    if (age >= max_age_) return kBuckets - 1;
    const double frac = std::log(static_cast<double>(age)) / std::log(static_cast<double>(max_age_));
    return std::min<std::size_t>(kBuckets - 2, 1 + static_cast<std::size_t>(std::floor((kBuckets - 2) * frac)));
  }

 private:
  int max_age_;
  ad::Embedding table_;
};

struct AgedEntries {
  ad::Tensor rows;                   // [J, dim]
  std::vector<std::size_t> buckets;  // per row
};

inline AgedEntries aged_entries(const MemoryBuffer& buf, const AgeEmbeddingTable& table, int t) {
  const std::size_t dim = table.dim();
  AgedEntries out{ad::Tensor({buf.size(), dim}), std::vector<std::size_t>(buf.size())};
  for (std::size_t j = 0; j < buf.size(); ++j) {
    if (buf[j].embedding.size() != dim) throw ShapeMismatch("aged_entries: entry dim differs from table dim");
    out.buckets[j] = table.bucket(t - buf[j].insert_step);
    const auto vec = table.table().row(out.buckets[j]);
    for (std::size_t i = 0; i < dim; ++i) out.rows[j * dim + i] = buf[j].embedding[i] + vec[i];
  }
  return out;
}

// JSON lines: entry records first, then edge records. Poses are optional oracle annotations for plots.
inline void dump_memory_jsonl(std::ostream& out, const MemoryBuffer& buf, const ExplorationGraph& graph,
                              const std::vector<Pose>* entry_poses = nullptr) {
  for (std::size_t j = 0; j < buf.size(); ++j) {
    nlohmann::json rec = {{"type", "entry"}, {"index", j}, {"insert_step", buf[j].insert_step}};
    if (entry_poses && j < entry_poses->size()) {
      const Pose& p = (*entry_poses)[j];
      rec["pose"] = {p.x, p.y, p.heading};
    }
    out << rec.dump() << '\n';
  }
  for (auto [a, b] : graph.edges()) out << nlohmann::json{{"type", "edge"}, {"from", a}, {"to", b}}.dump() << '\n';
}

}  // namespace memnav
