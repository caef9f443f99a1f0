// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "coe/cost_model.hpp"
#include "coe/types.hpp"

namespace coe {

// Experts resident in one executor's expert memory (or, with tier == host,
// in the shared host-DRAM cache). Keeps the bookkeeping every eviction policy
// needs: load order for FIFO and access order for LRU.
class ModelPool {
 public:
  struct Resident {
    Bytes bytes = 0;
    std::uint64_t loaded_tick = 0;
    std::uint64_t accessed_tick = 0;
  };

  ModelPool() = default;
  ModelPool(ExecutorId executor, Bytes budget, Tier tier = Tier::device)
      : executor_(executor), tier_(tier), budget_(budget) {}

  ExecutorId executor() const { return executor_; }
  Tier tier() const { return tier_; }
  Bytes budget() const { return budget_; }
  Bytes used() const { return used_; }
  Bytes free_bytes() const { return budget_ - used_; }
  std::size_t size() const { return resident_.size(); }

  bool contains(ExpertIndex e) const { return resident_.count(e) != 0; }
  bool pinned(ExpertIndex e) const { return pinned_.count(e) != 0; }
  const std::unordered_map<ExpertIndex, Resident>& resident() const { return resident_; }
  const std::unordered_set<ExpertIndex>& pinned_set() const { return pinned_; }

  Bytes pinned_bytes() const {
    Bytes b = 0;
    for (auto e : pinned_) b += resident_.at(e).bytes;
    return b;
  }

  // Residents sorted by index, for deterministic iteration.
  std::vector<ExpertIndex> residents() const {
    std::vector<ExpertIndex> out;
    out.reserve(resident_.size());
    for (const auto& [e, _] : resident_) out.push_back(e);
    std::sort(out.begin(), out.end());
    return out;
  }

  bool fits(Bytes bytes) const { return bytes <= free_bytes(); }

  void insert(ExpertIndex e, Bytes bytes) {
    if (contains(e)) return;
    if (!fits(bytes))
      throw MemoryStarvation("pool of executor " + std::to_string(executor_) + " over budget on insert");
    ++tick_;
    resident_.emplace(e, Resident{bytes, tick_, tick_});
    used_ += bytes;
  }

  void erase(ExpertIndex e) {
    auto it = resident_.find(e);
    if (it == resident_.end()) return;
    if (pinned_.count(e))
      throw std::logic_error("evicting pinned expert from executor " + std::to_string(executor_));
    used_ -= it->second.bytes;
    resident_.erase(it);
  }

  // Recency update; FIFO order is untouched.
  void touch(ExpertIndex e) {
    auto it = resident_.find(e);
    if (it != resident_.end()) it->second.accessed_tick = ++tick_;
  }

  void pin(ExpertIndex e) {
    if (!contains(e)) throw std::logic_error("pinning a non-resident expert");
    pinned_.insert(e);
  }
  void unpin(ExpertIndex e) { pinned_.erase(e); }

  // Bytes that must be freed before `needed` more bytes fit.
  Bytes deficit(Bytes needed) const { return needed > free_bytes() ? needed - free_bytes() : 0; }

 private:
  ExecutorId executor_ = 0;
  Tier tier_ = Tier::device;
  Bytes budget_ = 0;
  Bytes used_ = 0;
  std::uint64_t tick_ = 0;
  std::unordered_map<ExpertIndex, Resident> resident_;
  std::unordered_set<ExpertIndex> pinned_;
};

// Eviction list plus how many leading entries came from the first stage.
struct EvictionPlan {
  std::vector<ExpertIndex> victims;
  std::size_t stage1_count = 0;
};

// Answers "does the owning executor still have queued work for this expert?"
using QueuedPredicate = std::function<bool(ExpertIndex)>;

namespace detail {
inline MemoryStarvation starvation(const ModelPool& pool, Bytes needed) {
  return MemoryStarvation("executor " + std::to_string(pool.executor()) + " cannot free " + std::to_string(needed) +
                          " bytes: budget " + std::to_string(pool.budget()) + ", pinned " +
                          std::to_string(pool.pinned_bytes()));
}
}  // namespace detail

// Stage-1 candidates: unpinned downstream experts none of whose upstream
// experts are resident and which have no queued work. Descending footprint,
// ties by index.
inline std::vector<ExpertIndex> dependency_blocked(const ModelPool& pool, const ModelRegistry& registry,
                                                   const QueuedPredicate& queued) {
  std::vector<ExpertIndex> out;
  for (auto e : pool.residents()) {
    if (pool.pinned(e)) continue;
    const auto& ups = registry.upstream(e);
    if (ups.empty()) continue;
    if (std::any_of(ups.begin(), ups.end(), [&](ExpertIndex u) { return pool.contains(u); })) continue;
    if (queued && queued(e)) continue;
    out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(),
                   [&](ExpertIndex a, ExpertIndex b) { return registry.bytes(a) > registry.bytes(b); });
  return out;
}

// Ascending usage probability; ties by larger footprint, then index.
inline std::vector<ExpertIndex> by_ascending_usage(const ModelPool& pool, const ModelRegistry& registry) {
  std::vector<ExpertIndex> out;
  for (auto e : pool.residents())
    if (!pool.pinned(e)) out.push_back(e);
  std::sort(out.begin(), out.end(), [&](ExpertIndex a, ExpertIndex b) {
    if (registry.usage_prob(a) != registry.usage_prob(b)) return registry.usage_prob(a) < registry.usage_prob(b);
    if (registry.bytes(a) != registry.bytes(b)) return registry.bytes(a) > registry.bytes(b);
    return a < b;
  });
  return out;
}

// Two-stage eviction for making room for `needed_bytes`: dependency-blocked
// experts first (largest first), then everything else by ascending usage
// probability. Pure; the caller applies the plan.
inline EvictionPlan two_stage_evict(const ModelPool& pool, Bytes needed_bytes, const ModelRegistry& registry,
                                    const QueuedPredicate& queued = {}) {
  EvictionPlan plan;
  Bytes deficit = pool.deficit(needed_bytes);
  if (deficit == 0) return plan;

  std::unordered_set<ExpertIndex> taken;
  for (auto e : dependency_blocked(pool, registry, queued)) {
    plan.victims.push_back(e);
    taken.insert(e);
    const Bytes b = registry.bytes(e);
    deficit = b >= deficit ? 0 : deficit - b;
    if (deficit == 0) break;
  }
  plan.stage1_count = plan.victims.size();
  if (deficit == 0) return plan;

  for (auto e : by_ascending_usage(pool, registry)) {
    if (taken.count(e)) continue;
    plan.victims.push_back(e);
    const Bytes b = registry.bytes(e);
    deficit = b >= deficit ? 0 : deficit - b;
    if (deficit == 0) return plan;
  }
  throw detail::starvation(pool, needed_bytes);
}

// Evict in a fixed priority order until the deficit is covered.
template <typename Order>
EvictionPlan evict_in_order(const ModelPool& pool, Bytes needed_bytes, const ModelRegistry& registry,
                            Order&& order) {
  EvictionPlan plan;
  Bytes deficit = pool.deficit(needed_bytes);
  if (deficit == 0) return plan;
  for (auto e : order) {
    plan.victims.push_back(e);
    const Bytes b = registry.bytes(e);
    deficit = b >= deficit ? 0 : deficit - b;
    if (deficit == 0) return plan;
  }
  throw detail::starvation(pool, needed_bytes);
}

// Stage-2 ordering alone; used for the host-DRAM cache.
inline EvictionPlan usage_evict(const ModelPool& pool, Bytes needed_bytes, const ModelRegistry& registry) {
  return evict_in_order(pool, needed_bytes, registry, by_ascending_usage(pool, registry));
}

// Deals experts in descending usage order round-robin across executors. An
// expert that does not fit its turn's executor is offered to the following
// executors in rotation; dealing stops at the first expert nobody can take.
inline void initialize_pools(const ModelRegistry& registry, std::vector<ModelPool>& pools) {
  if (pools.empty()) return;
  std::size_t turn = 0;
  for (auto e : registry.by_descending_usage()) {
    const Bytes b = registry.bytes(e);
    bool placed = false;
    for (std::size_t k = 0; k < pools.size(); ++k) {
      auto& pool = pools[(turn + k) % pools.size()];
      if (pool.fits(b)) {
        pool.insert(e, b);
        turn = (turn + k + 1) % pools.size();
        placed = true;
        break;
      }
    }
    if (!placed) return;
  }
}

using Evictor = std::function<EvictionPlan(const ModelPool&, Bytes)>;

struct LoadEvent {
  ExpertIndex expert{};
  Tier source = Tier::ssd;
  double latency_s = 0.0;
  std::vector<ExpertIndex> evicted;
};

// Makes `e` resident in `pool`: no-op when already there, otherwise evicts per
// `evict` and loads from `source` (host when the NUMA host cache holds the
// expert, else ssd). Counts a switch for every load.
inline std::optional<LoadEvent> ensure_loaded(ModelPool& pool, ExpertIndex e, const ModelRegistry& registry,
                                              const DeviceProfile& device, Processor proc, Tier source,
                                              const Evictor& evict, std::uint64_t& switches) {
  if (pool.contains(e)) return std::nullopt;
  const Bytes bytes = registry.bytes(e);
  if (bytes > pool.budget())
    throw MemoryStarvation("expert '" + registry.expert(e).expert_id + "' (" + std::to_string(bytes) +
                           " bytes) exceeds the expert budget of executor " + std::to_string(pool.executor()));
  LoadEvent ev;
  ev.expert = e;
  ev.source = source;
  ev.evicted = evict(pool, bytes).victims;
  for (auto victim : ev.evicted) pool.erase(victim);
  pool.insert(e, bytes);
  ev.latency_s = load_latency({source, proc, bytes}, device);
  ++switches;
  return ev;
}

}  // namespace coe
