#pragma once

// Content-addressed observation table. The simulator has finitely many
// distinct views, so interning them lets frozen networks memoize per view.

#include <cstdint>
#include <cstring>
#include <span>
#include <unordered_map>
#include <vector>

#include "memnav/autodiff/tensor.hpp"
#include "memnav/env.hpp"

namespace memnav {

using ObsId = std::uint32_t;

// Network input is kInputScale * (value - kInputShift); shaded wall colors average near 0.25.
inline constexpr double kInputShift = 0.25, kInputScale = 4.0;

class ObservationStore {
 public:
  ObsId intern(const Observation& obs) {
    const std::uint64_t h = hash(obs);
    auto [lo, hi] = index_.equal_range(h);
    for (auto it = lo; it != hi; ++it) {
      if (items_[it->second] == obs) return it->second;
    }
    const auto id = static_cast<ObsId>(items_.size());
    items_.push_back(obs);
    index_.emplace(h, id);
    return id;
  }

  const Observation& get(ObsId id) const { return items_.at(id); }
  std::size_t size() const { return items_.size(); }

 private:
  static std::uint64_t hash(const Observation& obs) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : obs.values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = Rng::mix(h ^ bits);
    }
    return h;
  }

  std::vector<Observation> items_;
  std::unordered_multimap<std::uint64_t, ObsId> index_;
};

// Stacks observations into the network layout [B, 3, W] (channel-major rows).
inline ad::Tensor stack_observations(std::span<const Observation* const> batch) {
  if (batch.empty()) return ad::Tensor({0, 3, 0});
  const std::size_t rays = static_cast<std::size_t>(batch.front()->rays);
  ad::Tensor t({batch.size(), 3, rays});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Observation& o = *batch[b];
    if (static_cast<std::size_t>(o.rays) != rays) throw ShapeMismatch("observations with different ray counts");
    for (std::size_t r = 0; r < rays; ++r)
      for (std::size_t c = 0; c < 3; ++c) t[(b * 3 + c) * rays + r] = kInputScale * (o.values[r * 3 + c] - kInputShift);
  }
  return t;
}

inline ad::Tensor stack_observations(const Observation& obs) {
  const Observation* one[] = {&obs};
  return stack_observations(one);
}

}  // namespace memnav
