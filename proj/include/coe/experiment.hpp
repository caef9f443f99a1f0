// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "coe/engine.hpp"
#include "coe/profiler.hpp"
#include "coe/random.hpp"
#include "coe/types.hpp"
#include "coe/workload.hpp"

namespace coe {

// Executor layout and memory budgets, memory-allocation search, and
// multi-seed policy comparisons.

struct Layout {
  int gpu = 1;
  int cpu = 0;

  int total() const { return gpu + cpu; }
  friend bool operator==(const Layout&, const Layout&) = default;
};

inline std::string to_string(const Layout& l) { return std::to_string(l.gpu) + "G+" + std::to_string(l.cpu) + "C"; }

// Baselines split each executor's memory 75/25 between experts and inference.
inline constexpr double kBaselineExpertShare = 0.75;
// On numa, CPU executors take this share of host DRAM; the rest caches experts.
inline constexpr double kHostCpuShare = 0.5;

struct MemoryPlan {
  std::vector<ExecutorSpec> executors;
  Bytes host_cache_bytes = 0;
};

// Memory one executor of `proc` gets before the expert/inference split.
inline Bytes executor_memory(const DeviceProfile& device, Layout layout, Processor proc) {
  if (device.architecture == MemoryArch::uma)
    return device.tier(Tier::device).capacity_bytes / static_cast<Bytes>(std::max(layout.total(), 1));
  if (proc == Processor::gpu) return device.tier(Tier::device).capacity_bytes / static_cast<Bytes>(std::max(layout.gpu, 1));
  const auto share = static_cast<Bytes>(kHostCpuShare * static_cast<double>(device.tier(Tier::host).capacity_bytes));
  return share / static_cast<Bytes>(std::max(layout.cpu, 1));
}

// Largest max-batch working set over the architectures the registry uses.
inline Bytes max_batch_inference_memory(const ModelRegistry& registry, const DeviceProfile& device,
                                        const PerfProfile& perf, Processor proc) {
  Bytes worst = 0;
  for (const auto& arch : registry.archs())
    worst = std::max(worst, inference_memory(device.constants(arch.id, proc), perf.at(arch.id, proc).max_batch));
  return worst;
}

inline Bytes min_inference_memory(const ModelRegistry& registry, const DeviceProfile& device, Processor proc) {
  Bytes worst = 0;
  for (const auto& arch : registry.archs()) worst = std::max(worst, inference_memory(device.constants(arch.id, proc), 1));
  return worst;
}

inline AllocationMode allocation_mode(const ModelRegistry& registry, const DeviceProfile& device,
                                      const PerfProfile& perf, Layout layout, Processor proc,
                                      double threshold = kDefaultReserveThreshold) {
  const double needed = static_cast<double>(max_batch_inference_memory(registry, device, perf, proc));
  return needed <= threshold * static_cast<double>(executor_memory(device, layout, proc))
             ? AllocationMode::max_batch_reserve
             : AllocationMode::window_search;
}

// Expert budget that holds `count` of the most used experts spread over
// `executors` pools.
inline Bytes expert_budget_for(const ModelRegistry& registry, int count, int executors) {
  if (count <= 0) return 0;
  const auto order = registry.by_descending_usage();
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(count), order.size());
  Bytes largest = 0;
  for (std::size_t i = 0; i < n; ++i) largest = std::max(largest, registry.bytes(order[i]));
  const auto per_pool = static_cast<Bytes>((n + static_cast<std::size_t>(executors) - 1) /
                                           static_cast<std::size_t>(executors));
  return per_pool * largest;
}

// Budgets for every executor. `gpu_experts` is the resident-expert count from
// the window search; without it every processor reserves its max-batch
// working set. Baselines use the fixed 75/25 split.
inline MemoryPlan plan_memory(const ModelRegistry& registry, const DeviceProfile& device, const PerfProfile& perf,
                              Layout layout, Policy policy, std::optional<int> gpu_experts = std::nullopt) {
  if (layout.gpu < 0 || layout.cpu < 0 || layout.total() < 1) throw ConfigError("layout needs at least one executor");
  MemoryPlan plan;
  for (Processor proc : {Processor::gpu, Processor::cpu}) {
    const int n = proc == Processor::gpu ? layout.gpu : layout.cpu;
    if (n == 0) continue;
    const Bytes memory = executor_memory(device, layout, proc);
    ExecutorSpec spec;
    spec.proc = proc;
    if (is_samba(policy)) {
      spec.expert_budget = static_cast<Bytes>(kBaselineExpertShare * static_cast<double>(memory));
    } else if (proc == Processor::gpu && gpu_experts) {
      spec.expert_budget = std::min(memory, expert_budget_for(registry, *gpu_experts, layout.gpu));
    } else {
      const Bytes reserve = max_batch_inference_memory(registry, device, perf, proc);
      spec.expert_budget = reserve < memory ? memory - reserve : 0;
    }
    spec.inference_budget = memory - spec.expert_budget;
    for (int i = 0; i < n; ++i) plan.executors.push_back(spec);
  }
  if (device.architecture == MemoryArch::numa) {
    const Bytes host = device.tier(Tier::host).capacity_bytes;
    const auto cpu_share = static_cast<Bytes>(kHostCpuShare * static_cast<double>(host));
    plan.host_cache_bytes = layout.cpu > 0 ? host - cpu_share : host;
  }
  return plan;
}

inline bool plan_feasible(const MemoryPlan& plan, const ModelRegistry& registry, const DeviceProfile& device) {
  for (const auto& e : plan.executors)
    if (e.inference_budget < min_inference_memory(registry, device, e.proc)) return false;
  return true;
}

struct SimulationInputs {
  std::shared_ptr<const ModelRegistry> registry;
  DeviceProfile device;
  PerfProfile perf;
  double contention_factor = 1.15;
};

inline EngineConfig make_engine_config(const SimulationInputs& in, Policy policy, const MemoryPlan& plan,
                                       std::vector<Request> workload, std::uint64_t seed, bool trace = false) {
  EngineConfig c;
  c.registry = in.registry;
  c.device = in.device;
  c.perf = in.perf;
  c.policy = policy;
  c.workload = std::move(workload);
  c.executors = plan.executors;
  c.host_cache_bytes = plan.host_cache_bytes;
  c.contention_factor = in.contention_factor;
  c.seed = seed;
  c.record_trace = trace;
  return c;
}

inline constexpr int kSearchSampleRequests = 500;

// Sample workload used by the memory search: a reduced stream with its own
// derived seed.
inline std::vector<Request> search_sample(const ModelRegistry& registry, std::uint64_t seed,
                                          int requests = kSearchSampleRequests) {
  return generate_stream(registry, {requests, 0.004, derive_seed(seed, "search")});
}

// Throughput of the sample workload with `count` experts resident on the GPU
// executors. Infeasible counts score zero.
inline double sample_throughput(const SimulationInputs& in, Layout layout, Policy policy,
                                const std::vector<Request>& sample, std::uint64_t seed, int count) {
  const auto plan = plan_memory(*in.registry, in.device, in.perf, layout, policy, count);
  if (!plan_feasible(plan, *in.registry, in.device)) return 0.0;
  try {
    return run(make_engine_config(in, policy, plan, sample, seed)).metrics.throughput_rps;
  } catch (const MemoryStarvation&) {
    return 0.0;
  }
}

// Largest GPU resident-expert count that still leaves every executor room
// for a one-item batch.
inline int max_feasible_experts(const SimulationInputs& in, Layout layout, Policy policy = Policy::coserve) {
  for (int count = static_cast<int>(in.registry->size()); count > 0; --count)
    if (plan_feasible(plan_memory(*in.registry, in.device, in.perf, layout, policy, count), *in.registry, in.device))
      return count;
  throw MemoryStarvation("layout " + to_string(layout) + " cannot hold a single expert next to a one-item batch");
}

// Decay-window search over the GPU resident-expert count, each probe running
// the sample workload through the simulator.
inline WindowSearchResult search_memory_allocation(const SimulationInputs& in, Layout layout,
                                                   const std::vector<Request>& sample, std::uint64_t seed,
                                                   WindowSearchParams params = {}, Policy policy = Policy::coserve) {
  if (sample.empty()) throw ConfigError("memory search needs a non-empty sample workload");
  params.seed = derive_seed(seed, "choose");
  return search_window(
      max_feasible_experts(in, layout, policy),
      [&](int count) { return sample_throughput(in, layout, policy, sample, seed, count); }, params);
}

struct RunOptions {
  Policy policy = Policy::coserve;
  Layout layout{1, 0};
  std::uint64_t seed = 1;
  int num_requests = 2500;
  double interarrival_s = 0.004;
  std::optional<int> gpu_experts;  // skip the search when set
  WindowSearchParams search;
  bool trace = false;
};

struct RunOutcome {
  RunOptions options;
  std::optional<WindowSearchResult> search;
  RunResult result;
};

// Full pipeline for one policy and seed: memory search when the GPU needs one,
// then the measured run on the task stream.
inline RunOutcome run_once(const SimulationInputs& in, RunOptions opt) {
  RunOutcome out;
  const auto& reg = *in.registry;
  if (!is_samba(opt.policy) && !opt.gpu_experts && opt.layout.gpu > 0 &&
      allocation_mode(reg, in.device, in.perf, opt.layout, Processor::gpu) == AllocationMode::window_search) {
    out.search = search_memory_allocation(in, opt.layout, search_sample(reg, opt.seed), opt.seed, opt.search);
    opt.gpu_experts = out.search->chosen;
  }
  out.options = opt;
  auto stream = generate_stream(reg, {opt.num_requests, opt.interarrival_s, derive_seed(opt.seed, "stream")});
  const auto plan = plan_memory(reg, in.device, in.perf, opt.layout, opt.policy, opt.gpu_experts);
  out.result = run(make_engine_config(in, opt.policy, plan, std::move(stream), opt.seed, opt.trace));
  return out;
}

// Runs jobs on a small worker pool; results come back in job order.
template <typename Job>
auto parallel_map(const std::vector<Job>& jobs, unsigned workers = std::thread::hardware_concurrency())
    -> std::vector<decltype(jobs.front()())> {
  using R = decltype(jobs.front()());
  std::vector<R> results(jobs.size());
  workers = std::max(1u, workers);
  std::size_t next = 0;
  while (next < jobs.size()) {
    std::vector<std::future<R>> batch;
    for (unsigned w = 0; w < workers && next < jobs.size(); ++w, ++next) batch.push_back(std::async(std::launch::async, jobs[next]));
    const std::size_t first = next - batch.size();
    for (std::size_t i = 0; i < batch.size(); ++i) results[first + i] = batch[i].get();
  }
  return results;
}

struct Summary {
  double mean = 0.0;
  double stdev = 0.0;
};

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    for (double x : xs) s.stdev += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(s.stdev / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct PolicyRow {
  Policy policy = Policy::coserve;
  Layout layout;
  Summary throughput;
  Summary switches;
  double ratio_vs_samba_lru = 0.0;
  double switch_reduction_vs_samba_lru = 0.0;
  double mean_service_time_s = 0.0;
  double scheduling_wall_per_request_s = 0.0;
  std::vector<RunOutcome> runs;
};

struct CompareOptions {
  int num_requests = 2500;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Layout> coserve_layouts{{2, 0}, {2, 1}, {3, 0}, {3, 1}, {4, 0}, {4, 1}};
  Layout samba_layout{1, 0};
  bool ablation = false;
  WindowSearchParams search;
  unsigned workers = std::thread::hardware_concurrency();
};

struct Comparison {
  Layout best_layout;
  std::vector<PolicyRow> rows;
  std::vector<PolicyRow> layout_sweep;  // coserve at every candidate layout

  const PolicyRow& row(Policy p) const {
    for (const auto& r : rows)
      if (r.policy == p) return r;
    throw ConfigError("comparison has no row for " + std::string(to_string(p)));
  }
};

namespace detail {
inline PolicyRow make_row(Policy p, Layout layout, std::vector<RunOutcome> runs) {
  PolicyRow row;
  row.policy = p;
  row.layout = layout;
  std::vector<double> tput, sw;
  double service = 0.0, wall = 0.0;
  std::uint64_t scheduled = 0;
  for (const auto& r : runs) {
    tput.push_back(r.result.metrics.throughput_rps);
    sw.push_back(static_cast<double>(r.result.metrics.expert_switches));
    service += r.result.metrics.mean_service_time_s;
    wall += r.result.scheduling_wall_s;
    scheduled += r.result.scheduled_requests;
  }
  row.throughput = summarize(tput);
  row.switches = summarize(sw);
  row.mean_service_time_s = runs.empty() ? 0.0 : service / static_cast<double>(runs.size());
  row.scheduling_wall_per_request_s = scheduled ? wall / static_cast<double>(scheduled) : 0.0;
  row.runs = std::move(runs);
  return row;
}
}  // namespace detail

// CoServe at its best layout (swept over `coserve_layouts`) against the
// baselines, averaged over seeds. With `ablation`, adds the partial variants at
// the best layout using the same resident-expert counts as full CoServe.
inline Comparison compare(const SimulationInputs& in, const CompareOptions& opt) {
  using Job = std::function<RunOutcome()>;
  auto jobs_for = [&](Policy p, Layout layout, const std::vector<std::optional<int>>& counts) {
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < opt.seeds.size(); ++i) {
      RunOptions ro;
      ro.policy = p;
      ro.layout = layout;
      ro.seed = opt.seeds[i];
      ro.num_requests = opt.num_requests;
      ro.search = opt.search;
      ro.gpu_experts = counts.empty() ? std::nullopt : counts[i];
      jobs.push_back([&in, ro] { return run_once(in, ro); });
    }
    return jobs;
  };

  Comparison cmp;
  for (const auto& layout : opt.coserve_layouts)
    cmp.layout_sweep.push_back(
        detail::make_row(Policy::coserve, layout, parallel_map(jobs_for(Policy::coserve, layout, {}), opt.workers)));
  if (cmp.layout_sweep.empty()) throw ConfigError("compare needs at least one CoServe layout");
  const auto best = std::max_element(cmp.layout_sweep.begin(), cmp.layout_sweep.end(), [](const auto& a, const auto& b) {
    return a.throughput.mean < b.throughput.mean;
  });
  cmp.best_layout = best->layout;
  std::vector<std::optional<int>> counts;
  for (const auto& r : best->runs) counts.push_back(r.options.gpu_experts);

  cmp.rows.push_back(*best);
  auto add = [&](Policy p, Layout layout, const std::vector<std::optional<int>>& c) {
    cmp.rows.push_back(detail::make_row(p, layout, parallel_map(jobs_for(p, layout, c), opt.workers)));
  };
  add(Policy::samba_lru, opt.samba_layout, {});
  add(Policy::samba_fifo, opt.samba_layout, {});
  add(Policy::samba_parallel, cmp.best_layout, {});
  if (opt.ablation) {
    add(Policy::coserve_none, cmp.best_layout, counts);
    add(Policy::coserve_em, cmp.best_layout, counts);
    add(Policy::coserve_em_ra, cmp.best_layout, counts);
  }

  const auto& lru = cmp.row(Policy::samba_lru);
  for (auto* rows : {&cmp.rows, &cmp.layout_sweep})
    for (auto& r : *rows) {
      r.ratio_vs_samba_lru = lru.throughput.mean > 0.0 ? r.throughput.mean / lru.throughput.mean : 0.0;
      r.switch_reduction_vs_samba_lru =
          lru.switches.mean > 0.0 ? 1.0 - r.switches.mean / lru.switches.mean : 0.0;
    }
  return cmp;
}

}  // namespace coe
