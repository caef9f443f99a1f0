// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coe/baselines.hpp"
#include "coe/cost_model.hpp"
#include "coe/expert_manager.hpp"
#include "coe/profiler.hpp"
#include "coe/random.hpp"
#include "coe/scheduler.hpp"
#include "coe/types.hpp"

namespace coe {

enum class Policy : std::uint8_t {
  coserve,
  samba_lru,
  samba_fifo,
  samba_parallel,
  coserve_none,
  coserve_em,
  coserve_em_ra,
};

enum class EvictionKind : std::uint8_t { two_stage, lru, fifo };

struct PolicyTraits {
  bool makespan_assign = false;  // otherwise round-robin
  bool arrange = false;          // otherwise FCFS
  EvictionKind eviction = EvictionKind::lru;
};

inline PolicyTraits traits(Policy p) {
  switch (p) {
    case Policy::coserve: return {true, true, EvictionKind::two_stage};
    case Policy::coserve_em_ra: return {false, true, EvictionKind::two_stage};
    case Policy::coserve_em: return {false, false, EvictionKind::two_stage};
    case Policy::coserve_none: return {false, false, EvictionKind::fifo};
    case Policy::samba_lru: return {false, false, EvictionKind::lru};
    case Policy::samba_fifo: return {false, false, EvictionKind::fifo};
    case Policy::samba_parallel: return {false, false, EvictionKind::lru};
  }
  return {};
}

inline std::string_view to_string(Policy p) {
  switch (p) {
    case Policy::coserve: return "coserve";
    case Policy::samba_lru: return "samba_lru";
    case Policy::samba_fifo: return "samba_fifo";
    case Policy::samba_parallel: return "samba_parallel";
    case Policy::coserve_none: return "coserve_none";
    case Policy::coserve_em: return "coserve_em";
    case Policy::coserve_em_ra: return "coserve_em_ra";
  }
  return "?";
}

inline Policy parse_policy(std::string_view s) {
  for (auto p : {Policy::coserve, Policy::samba_lru, Policy::samba_fifo, Policy::samba_parallel,
                 Policy::coserve_none, Policy::coserve_em, Policy::coserve_em_ra})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown policy '" + std::string(s) + "'");
}

inline bool is_samba(Policy p) {
  return p == Policy::samba_lru || p == Policy::samba_fifo || p == Policy::samba_parallel;
}

struct ExecutorSpec {
  Processor proc = Processor::gpu;
  Bytes expert_budget = 0;
  Bytes inference_budget = 0;
};

struct EngineConfig {
  std::shared_ptr<const ModelRegistry> registry;
  DeviceProfile device;
  PerfProfile perf;
  Policy policy = Policy::coserve;
  std::vector<Request> workload;
  std::vector<ExecutorSpec> executors;
  Bytes host_cache_bytes = 0;  // shared host-DRAM expert cache, numa only
  // K multiplier per extra executor sharing a processor; 1.0 = independent lanes.
  double contention_factor = 1.15;
  std::uint64_t seed = 1;  // branch resolution
  bool record_trace = false;
};

struct ExecutorMetrics {
  ExecutorId id = 0;
  Processor proc = Processor::gpu;
  double busy_s = 0.0;
  double busy_fraction = 0.0;
  std::uint64_t switches = 0;
  std::uint64_t batches = 0;
  std::uint64_t items = 0;

  friend bool operator==(const ExecutorMetrics&, const ExecutorMetrics&) = default;
};

struct Metrics {
  Policy policy = Policy::coserve;
  double throughput_rps = 0.0;
  std::uint64_t expert_switches = 0;
  double makespan_s = 0.0;
  std::uint64_t external_requests = 0;
  std::uint64_t completed_requests = 0;
  std::uint64_t follow_ups_generated = 0;
  std::uint64_t follow_ups_completed = 0;
  std::uint64_t stale_predictions = 0;
  std::uint64_t evictions = 0;
  std::uint64_t host_loads = 0;
  std::uint64_t ssd_loads = 0;
  double mean_service_time_s = 0.0;  // executor busy time per served invocation
  std::vector<ExecutorMetrics> executors;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

struct TraceRecord {
  double time_s = 0.0;
  ExecutorId executor = -1;  // -1: host cache
  std::string event;
  std::optional<ExpertIndex> expert;
  std::optional<RequestId> request;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct RunResult {
  Metrics metrics;
  std::vector<TraceRecord> trace;
  // Wall-clock time spent assigning and arranging; not part of Metrics so
  // that metrics stay reproducible.
  double scheduling_wall_s = 0.0;
  std::uint64_t scheduled_requests = 0;
};

// Deterministic discrete-event simulation of one serving run.
class Simulator {
 public:
  explicit Simulator(EngineConfig config) : cfg_(std::move(config)) {
    if (!cfg_.registry) throw ConfigError("engine config has no registry");
    if (cfg_.executors.empty()) throw ConfigError("engine config has no executors");
    cfg_.device.validate();
    traits_ = traits(cfg_.policy);
    branch_seed_ = derive_seed(cfg_.seed, "branch");
    setup();
  }

  RunResult run() {
    while (!events_.empty()) {
      const Event ev = events_.top();
      events_.pop();
      now_ = ev.time;
      switch (ev.kind) {
        case EventKind::arrival:
        case EventKind::follow_up: on_request(ev); break;
        case EventKind::dispatch: on_dispatch(ev.executor); break;
        case EventKind::load_done: on_load_done(ev.executor); break;
        case EventKind::batch_done: on_batch_done(ev.executor); break;
      }
    }
    finish();
    return std::move(result_);
  }

 private:
  enum class EventKind : std::uint8_t { arrival, follow_up, load_done, batch_done, dispatch };

  struct Event {
    double time = 0.0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::arrival;
    ExecutorId executor = -1;
    RequestId request = 0;

    bool operator>(const Event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };

  struct Executor {
    ExecutorSpec spec;
    RequestQueue queue;
    ModelPool pool;
    double k_scale = 1.0;
    bool busy = false;
    bool dispatch_pending = false;
    std::optional<ExpertIndex> running;
    std::vector<RequestId> batch;
    ExecutorMetrics stats;
  };

  struct Live {
    Request request;
    RequestId root = 0;  // external request this stage belongs to
  };

  const ModelRegistry& registry() const { return *cfg_.registry; }

  void setup() {
    const auto& reg = registry();
    int per_proc[2] = {0, 0};
    for (const auto& spec : cfg_.executors) per_proc[static_cast<int>(spec.proc)] += 1;
    std::vector<ModelPool> pools;
    for (std::size_t i = 0; i < cfg_.executors.size(); ++i) {
      const auto id = static_cast<ExecutorId>(i);
      pools.emplace_back(id, cfg_.executors[i].expert_budget);
    }
    initialize_pools(reg, pools);

    for (std::size_t i = 0; i < cfg_.executors.size(); ++i) {
      Executor ex;
      ex.spec = cfg_.executors[i];
      ex.queue = RequestQueue(static_cast<ExecutorId>(i), ex.spec.proc);
      ex.pool = std::move(pools[i]);
      ex.k_scale = contention_scale(cfg_.contention_factor, per_proc[static_cast<int>(ex.spec.proc)]);
      ex.stats.id = static_cast<ExecutorId>(i);
      ex.stats.proc = ex.spec.proc;
      executors_.push_back(std::move(ex));
    }

    if (cfg_.device.architecture == MemoryArch::numa && cfg_.host_cache_bytes > 0) {
      host_cache_.emplace(-1, cfg_.host_cache_bytes, Tier::host);
      for (auto e : reg.by_descending_usage()) {
        bool on_device = false;
        for (const auto& ex : executors_) on_device = on_device || ex.pool.contains(e);
        if (!on_device && host_cache_->fits(reg.bytes(e))) host_cache_->insert(e, reg.bytes(e));
      }
    }

    for (const auto& r : cfg_.workload) {
      if (r.chain.empty()) throw ConfigError("request " + std::to_string(r.request_id) + " has an empty chain");
      live_.emplace(r.request_id, Live{r, r.request_id});
      next_id_ = std::max(next_id_, r.request_id + 1);
      push({r.arrival_time_s, 0, EventKind::arrival, -1, r.request_id});
    }
    result_.metrics.policy = cfg_.policy;
    result_.metrics.external_requests = cfg_.workload.size();
  }

  void push(Event ev) {
    ev.seq = seq_++;
    events_.push(ev);
  }

  void trace(ExecutorId ex, std::string_view event, std::optional<ExpertIndex> expert,
             std::optional<RequestId> request) {
    if (cfg_.record_trace) result_.trace.push_back({now_, ex, std::string(event), expert, request});
  }

  Tier source_tier(ExpertIndex e) const {
    if (host_cache_ && host_cache_->contains(e)) return Tier::host;
    return Tier::ssd;
  }

  const PerfEntry& perf(ExpertIndex e, Processor proc) const {
    return cfg_.perf.at(registry().arch_of(e).id, proc);
  }

  // ---- scheduling -------------------------------------------------------

  void on_request(const Event& ev) {
    auto& live = live_.at(ev.request);
    const ExpertIndex expert = live.request.chain.front();
    trace(-1, ev.kind == EventKind::arrival ? "arrival" : "follow_up", expert, ev.request);

    const auto started = std::chrono::steady_clock::now();
    ExecutorId target = 0;
    AddedLatency added;
    if (traits_.makespan_assign) {
      candidates_.clear();
      std::vector<AddedLatency> per_queue;
      per_queue.reserve(executors_.size());
      for (const auto& ex : executors_) {
        per_queue.push_back(predict_added_latency(ex.queue, expert, ex.pool.contains(expert),
                                                  perf(expert, ex.spec.proc), source_tier(expert)));
        candidates_.push_back({ex.queue.executor(), ex.queue.total_pending_s(), per_queue.back().total()});
      }
      target = assign(candidates_);
      added = per_queue[static_cast<std::size_t>(target)];
    } else {
      target = round_robin_.assign(executors_.size());
      const auto& ex = executors_[static_cast<std::size_t>(target)];
      added = predict_added_latency(ex.queue, expert, ex.pool.contains(expert), perf(expert, ex.spec.proc),
                                    source_tier(expert));
    }
    auto& ex = executors_[static_cast<std::size_t>(target)];
    const std::size_t pos = traits_.arrange ? arrange(ex.queue, expert) : ex.queue.size();
    ex.queue.insert(pos, {ev.request, expert, added.total(), added.switch_s > 0.0});
    result_.scheduling_wall_s += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result_.scheduled_requests += 1;

    trace(target, "enqueue", expert, ev.request);
    wake(target);
  }

  void wake(ExecutorId id) {
    auto& ex = executors_[static_cast<std::size_t>(id)];
    if (ex.busy || ex.dispatch_pending || ex.queue.empty()) return;
    ex.dispatch_pending = true;
    push({now_, 0, EventKind::dispatch, id, 0});
  }

  // ---- execution --------------------------------------------------------

  EvictionPlan evict_for(const Executor& ex, const ModelPool& pool, Bytes needed) const {
    switch (traits_.eviction) {
      case EvictionKind::two_stage:
        return two_stage_evict(pool, needed, registry(), [&](ExpertIndex e) { return ex.queue.has_expert(e); });
      case EvictionKind::lru: return lru_evict(pool, needed, registry());
      case EvictionKind::fifo: return fifo_evict(pool, needed, registry());
    }
    return {};
  }

  EvictionPlan evict_host(const ModelPool& pool, Bytes needed) const {
    switch (traits_.eviction) {
      case EvictionKind::two_stage: return usage_evict(pool, needed, registry());
      case EvictionKind::lru: return lru_evict(pool, needed, registry());
      case EvictionKind::fifo: return fifo_evict(pool, needed, registry());
    }
    return {};
  }

  void on_dispatch(ExecutorId id) {
    auto& ex = executors_[static_cast<std::size_t>(id)];
    ex.dispatch_pending = false;
    if (ex.busy || ex.queue.empty()) return;
    const ExpertIndex expert = ex.queue.entries().front().expert;
    ex.busy = true;
    ex.running = expert;

    const Tier source = source_tier(expert);
    std::optional<LoadEvent> load;
    try {
      load = ensure_loaded(
          ex.pool, expert, registry(), cfg_.device, ex.spec.proc, source,
          [&](const ModelPool& pool, Bytes needed) { return evict_for(ex, pool, needed); }, ex.stats.switches);
    } catch (const MemoryStarvation& err) {
      throw MemoryStarvation("executor " + std::to_string(id) + " at t=" + std::to_string(now_) + ": " + err.what());
    }
    ex.pool.pin(expert);
    if (!load) {
      start_batch(id);
      return;
    }

    for (auto victim : load->evicted) {
      result_.metrics.evictions += 1;
      trace(id, "evict", victim, std::nullopt);
      if (ex.queue.add_load_obligation(victim, perf(victim, ex.spec.proc).load_latency(source_tier(victim))))
        result_.metrics.stale_predictions += 1;
    }
    trace(id, load->source == Tier::host ? "load_host" : "load_ssd", expert, std::nullopt);
    if (load->source == Tier::host) {
      result_.metrics.host_loads += 1;
      host_cache_->touch(expert);
    } else {
      result_.metrics.ssd_loads += 1;
      admit_to_host_cache(expert);
    }
    ex.stats.busy_s += load->latency_s;
    push({now_ + load->latency_s, 0, EventKind::load_done, id, 0});
  }

  // Experts read from ssd pass through host DRAM on numa devices.
  void admit_to_host_cache(ExpertIndex e) {
    if (!host_cache_ || host_cache_->contains(e)) return;
    const Bytes bytes = registry().bytes(e);
    if (bytes > host_cache_->budget()) return;
    for (auto victim : evict_host(*host_cache_, bytes).victims) {
      host_cache_->erase(victim);
      trace(-1, "host_evict", victim, std::nullopt);
    }
    host_cache_->insert(e, bytes);
  }

  void on_load_done(ExecutorId id) {
    trace(id, "load_done", executors_[static_cast<std::size_t>(id)].running, std::nullopt);
    start_batch(id);
  }

  void start_batch(ExecutorId id) {
    auto& ex = executors_[static_cast<std::size_t>(id)];
    const ExpertIndex expert = *ex.running;
    const auto& arch = registry().arch_of(expert).id;
    const auto& constants = cfg_.device.constants(arch, ex.spec.proc);
    std::vector<int> batches;
    try {
      batches = split_batch(ex.queue.head_run(), ex.spec.inference_budget, perf(expert, ex.spec.proc).max_batch,
                            constants);
    } catch (const MemoryStarvation& err) {
      throw MemoryStarvation("executor " + std::to_string(id) + ": " + err.what());
    }
    const auto taken = ex.queue.pop_front(static_cast<std::size_t>(batches.front()));
    ex.batch.clear();
    for (const auto& entry : taken) ex.batch.push_back(entry.request);
    ex.pool.touch(expert);

    const double latency = exec_latency(constants, batches.front(), ex.k_scale);
    ex.stats.busy_s += latency;
    ex.stats.batches += 1;
    ex.stats.items += taken.size();
    trace(id, "batch_start", expert, ex.batch.front());
    push({now_ + latency, 0, EventKind::batch_done, id, 0});
  }

  void on_batch_done(ExecutorId id) {
    auto& ex = executors_[static_cast<std::size_t>(id)];
    const ExpertIndex expert = *ex.running;
    trace(id, "batch_done", expert, ex.batch.front());
    for (RequestId rid : ex.batch) {
      auto node = live_.extract(rid);
      Live& live = node.mapped();
      live.request.chain.erase(live.request.chain.begin());
      const bool was_follow_up = live.request.origin == Origin::follow_up;
      if (!live.request.chain.empty() && take_branch(live)) {
        Request next = live.request;
        next.request_id = next_id_++;
        next.arrival_time_s = now_;
        next.origin = Origin::follow_up;
        live_.emplace(next.request_id, Live{next, live.root});
        result_.metrics.follow_ups_generated += 1;
        push({now_, 0, EventKind::follow_up, -1, next.request_id});
      } else {
        result_.metrics.completed_requests += 1;
        result_.metrics.makespan_s = now_;
        trace(id, "complete", expert, live.root);
      }
      if (was_follow_up) result_.metrics.follow_ups_completed += 1;
    }
    ex.batch.clear();
    ex.pool.unpin(expert);
    ex.running.reset();
    ex.busy = false;
    wake(id);
  }

  bool take_branch(const Live& live) const {
    const auto& rule = registry().rule(live.request.component);
    return hash_unit(branch_seed_, live.root) < rule.detection_prob;
  }

  void finish() {
    auto& m = result_.metrics;
    if (!live_.empty() || m.completed_requests != m.external_requests)
      throw std::logic_error("simulation ended with " + std::to_string(live_.size()) + " unfinished requests");
    double busy_total = 0.0;
    std::uint64_t items = 0;
    for (auto& ex : executors_) {
      ex.stats.busy_fraction = m.makespan_s > 0.0 ? ex.stats.busy_s / m.makespan_s : 0.0;
      m.expert_switches += ex.stats.switches;
      busy_total += ex.stats.busy_s;
      items += ex.stats.items;
      m.executors.push_back(ex.stats);
    }
    m.throughput_rps = m.makespan_s > 0.0 ? static_cast<double>(m.completed_requests) / m.makespan_s : 0.0;
    m.mean_service_time_s = items > 0 ? busy_total / static_cast<double>(items) : 0.0;
  }

  EngineConfig cfg_;
  PolicyTraits traits_;
  std::uint64_t branch_seed_ = 0;
  std::vector<Executor> executors_;
  std::optional<ModelPool> host_cache_;
  std::unordered_map<RequestId, Live> live_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::vector<AssignCandidate> candidates_;
  RoundRobinAssigner round_robin_;
  RunResult result_;
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  RequestId next_id_ = 0;
};

inline RunResult run(EngineConfig config) { return Simulator(std::move(config)).run(); }

}  // namespace coe
