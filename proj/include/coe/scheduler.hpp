// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <deque>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "coe/cost_model.hpp"
#include "coe/profiler.hpp"
#include "coe/types.hpp"

namespace coe {

// One pending request in an executor queue, with the latency the scheduler
// charged for it when it was added.
struct QueueEntry {
  RequestId request = 0;
  ExpertIndex expert{};
  double predicted_s = 0.0;
  bool load_obligation = false;  // this entry pays for loading its expert

  friend bool operator==(const QueueEntry&, const QueueEntry&) = default;
};

// An executor's request queue. total_pending_s is the sum of the entries'
// predicted latencies, i.e. the queue's length in time.
class RequestQueue {
 public:
  RequestQueue() = default;
  RequestQueue(ExecutorId executor, Processor proc) : executor_(executor), proc_(proc) {}

  ExecutorId executor() const { return executor_; }
  Processor proc() const { return proc_; }
  double total_pending_s() const { return total_pending_s_; }
  const std::deque<QueueEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  int count(ExpertIndex e) const {
    auto it = per_expert_.find(e);
    return it == per_expert_.end() ? 0 : it->second.entries;
  }
  bool has_expert(ExpertIndex e) const { return count(e) > 0; }
  bool has_obligation(ExpertIndex e) const {
    auto it = per_expert_.find(e);
    return it != per_expert_.end() && it->second.obligations > 0;
  }

  void insert(std::size_t pos, const QueueEntry& entry) {
    if (pos > entries_.size()) throw std::out_of_range("queue insert position");
    entries_.insert(entries_.begin() + static_cast<std::ptrdiff_t>(pos), entry);
    auto& stats = per_expert_[entry.expert];
    stats.entries += 1;
    stats.obligations += entry.load_obligation ? 1 : 0;
    total_pending_s_ += entry.predicted_s;
  }

  // Length of the contiguous same-expert run at the head.
  std::size_t head_run() const {
    if (entries_.empty()) return 0;
    const auto e = entries_.front().expert;
    std::size_t n = 0;
    while (n < entries_.size() && entries_[n].expert == e) ++n;
    return n;
  }

  std::vector<QueueEntry> pop_front(std::size_t n) {
    n = std::min(n, entries_.size());
    std::vector<QueueEntry> out(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(n));
    entries_.erase(entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(n));
    for (const auto& entry : out) {
      auto it = per_expert_.find(entry.expert);
      it->second.entries -= 1;
      it->second.obligations -= entry.load_obligation ? 1 : 0;
      if (it->second.entries == 0) per_expert_.erase(it);
    }
    recompute_total();
    return out;
  }

  // The expert of queued entries was evicted after they were charged no
  // switching cost. The first such entry takes on the load. Returns false when
  // nothing had to change.
  bool add_load_obligation(ExpertIndex e, double load_s) {
    if (!has_expert(e) || has_obligation(e)) return false;
    for (auto& entry : entries_)
      if (entry.expert == e) {
        entry.load_obligation = true;
        entry.predicted_s += load_s;
        per_expert_[e].obligations += 1;
        total_pending_s_ += load_s;
        return true;
      }
    return false;
  }

  // Sum of predicted latencies recomputed from scratch.
  double recomputed_total() const {
    return std::accumulate(entries_.begin(), entries_.end(), 0.0,
                           [](double acc, const QueueEntry& q) { return acc + q.predicted_s; });
  }

 private:
  struct ExpertStats {
    int entries = 0;
    int obligations = 0;
  };

  void recompute_total() { total_pending_s_ = recomputed_total(); }

  ExecutorId executor_ = 0;
  Processor proc_ = Processor::gpu;
  double total_pending_s_ = 0.0;
  std::deque<QueueEntry> entries_;
  std::unordered_map<ExpertIndex, ExpertStats> per_expert_;
};

struct AddedLatency {
  double exec_s = 0.0;
  double switch_s = 0.0;
  double total() const { return exec_s + switch_s; }
};

// Latency a queue grows by when one more request for `expert` joins it.
// Execution: K when the queue already batches this expert, K + B otherwise.
// Switching: zero when the expert is in the pool or already queued (it will be
// loaded for the earlier entry), else the load latency from `source`.
inline AddedLatency predict_added_latency(const RequestQueue& queue, ExpertIndex expert, bool in_pool,
                                          const PerfEntry& perf, Tier source) {
  AddedLatency a;
  const bool queued = queue.has_expert(expert);
  a.exec_s = queued ? perf.k_s : perf.k_s + perf.b_s;
  a.switch_s = (in_pool || queued) ? 0.0 : perf.load_latency(source);
  return a;
}

struct AssignCandidate {
  ExecutorId executor = 0;
  double total_pending_s = 0.0;
  double added_s = 0.0;
};

// Picks the queue that minimizes the resulting makespan (the longest queue
// after the addition). Ties: smaller added latency, then lower executor id.
inline ExecutorId assign(std::span<const AssignCandidate> queues) {
  if (queues.empty()) throw ConfigError("assign needs at least one queue");
  // Longest and second-longest queue give "max over the others" in O(1).
  std::size_t longest = 0;
  for (std::size_t i = 1; i < queues.size(); ++i)
    if (queues[i].total_pending_s > queues[longest].total_pending_s) longest = i;
  double second = 0.0;
  for (std::size_t i = 0; i < queues.size(); ++i)
    if (i != longest) second = std::max(second, queues[i].total_pending_s);

  std::size_t best = 0;
  double best_makespan = 0.0;
  for (std::size_t i = 0; i < queues.size(); ++i) {
    const double others = i == longest ? second : queues[longest].total_pending_s;
    const double makespan = std::max(others, queues[i].total_pending_s + queues[i].added_s);
    const auto& b = queues[best];
    if (i == 0 || makespan < best_makespan ||
        (makespan == best_makespan &&
         (queues[i].added_s < b.added_s || (queues[i].added_s == b.added_s && queues[i].executor < b.executor)))) {
      best = i;
      best_makespan = makespan;
    }
  }
  return queues[best].executor;
}

// Insertion position that keeps same-expert requests together: right after
// the last queued entry for `expert`, else at the tail.
inline std::size_t arrange(const RequestQueue& queue, ExpertIndex expert) {
  if (!queue.has_expert(expert)) return queue.size();
  const auto& entries = queue.entries();
  for (std::size_t i = entries.size(); i-- > 0;)
    if (entries[i].expert == expert) return i + 1;
  return entries.size();
}

// Batch sizes for a run of `run_length` same-expert entries under the cap
// min(max_batch, largest batch whose working set fits `free_inference_memory`).
inline std::vector<int> split_batch(std::size_t run_length, Bytes free_inference_memory, int max_batch,
                                    const ExecConstants& constants) {
  const int cap = std::min(max_batch, memory_feasible_batch(constants, free_inference_memory));
  if (cap < 1)
    throw MemoryStarvation("no inference memory for a single item (" + std::to_string(free_inference_memory) +
                           " bytes free)");
  std::vector<int> batches;
  for (std::size_t left = run_length; left > 0;) {
    const int n = static_cast<int>(std::min<std::size_t>(left, static_cast<std::size_t>(cap)));
    batches.push_back(n);
    left -= static_cast<std::size_t>(n);
  }
  return batches;
}

}  // namespace coe
