// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "coe/expert_manager.hpp"
#include "coe/types.hpp"

namespace coe {

// Reference policies of the history-based serving baselines: LRU or FIFO
// expert replacement and round-robin request distribution.

inline std::vector<ExpertIndex> unpinned_by(const ModelPool& pool, std::uint64_t ModelPool::Resident::*tick) {
  std::vector<std::pair<std::uint64_t, ExpertIndex>> order;
  for (const auto& [e, r] : pool.resident())
    if (!pool.pinned(e)) order.emplace_back(r.*tick, e);
  std::sort(order.begin(), order.end());
  std::vector<ExpertIndex> out;
  out.reserve(order.size());
  for (const auto& [_, e] : order) out.push_back(e);
  return out;
}

// Least recently used first. Recency is refreshed by ModelPool::touch on every
// batch execution and by loading.
inline EvictionPlan lru_evict(const ModelPool& pool, Bytes needed_bytes, const ModelRegistry& registry) {
  return evict_in_order(pool, needed_bytes, registry, unpinned_by(pool, &ModelPool::Resident::accessed_tick));
}

// Residency-arrival order; touching a resident never moves it.
inline EvictionPlan fifo_evict(const ModelPool& pool, Bytes needed_bytes, const ModelRegistry& registry) {
  return evict_in_order(pool, needed_bytes, registry, unpinned_by(pool, &ModelPool::Resident::loaded_tick));
}

// Cycles through executors regardless of their queue state.
class RoundRobinAssigner {
 public:
  ExecutorId assign(std::size_t num_queues) {
    if (num_queues == 0) throw ConfigError("round-robin assignment needs at least one queue");
    const auto id = static_cast<ExecutorId>(next_ % num_queues);
    ++next_;
    return id;
  }

 private:
  std::size_t next_ = 0;
};

}  // namespace coe
