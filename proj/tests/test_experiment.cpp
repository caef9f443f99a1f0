// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "helpers.hpp"

namespace coe {
namespace {

SimulationInputs board_inputs(DeviceProfile device = numa_3080ti()) {
  SimulationInputs in;
  in.registry = testing::board_a();
  in.device = std::move(device);
  in.perf = profile_device(in.device, *in.registry);
  return in;
}

TEST(Layout, Names) {
  EXPECT_EQ(to_string(Layout{4, 1}), "4G+1C");
  EXPECT_EQ(to_string(Layout{1, 0}), "1G+0C");
}

TEST(PlanMemory, BaselineSplit) {
  const auto in = board_inputs();
  const auto plan = plan_memory(*in.registry, in.device, in.perf, {1, 0}, Policy::samba_lru);
  ASSERT_EQ(plan.executors.size(), 1u);
  EXPECT_EQ(plan.executors[0].expert_budget, gigabytes(9));
  EXPECT_EQ(plan.executors[0].inference_budget, gigabytes(3));
  EXPECT_EQ(plan.host_cache_bytes, gigabytes(16));
  const auto two = plan_memory(*in.registry, in.device, in.perf, {2, 1}, Policy::samba_parallel);
  ASSERT_EQ(two.executors.size(), 3u);
  EXPECT_EQ(two.executors[0].expert_budget, gigabytes(4.5));
  EXPECT_EQ(two.executors[2].proc, Processor::cpu);
  EXPECT_EQ(two.executors[2].expert_budget, gigabytes(6));
  EXPECT_EQ(two.host_cache_bytes, gigabytes(8));
}

TEST(PlanMemory, CountAndReserveModes) {
  const auto in = board_inputs();
  const auto& reg = *in.registry;
  EXPECT_EQ(expert_budget_for(reg, 10, 3), megabytes(800));
  EXPECT_EQ(expert_budget_for(reg, 0, 3), 0u);
  const auto plan = plan_memory(reg, in.device, in.perf, {3, 1}, Policy::coserve, 30);
  EXPECT_EQ(plan.executors[0].expert_budget, megabytes(2000));
  EXPECT_EQ(plan.executors[0].inference_budget, gigabytes(4) - megabytes(2000));
  const Bytes reserve = max_batch_inference_memory(reg, in.device, in.perf, Processor::cpu);
  EXPECT_EQ(plan.executors[3].inference_budget, reserve);
  EXPECT_EQ(plan.executors[3].expert_budget + reserve, gigabytes(8));
  EXPECT_TRUE(plan_feasible(plan, reg, in.device));

  const auto full = plan_memory(reg, in.device, in.perf, {3, 1}, Policy::coserve, 60);
  EXPECT_EQ(full.executors[0].inference_budget, 0u);
  EXPECT_FALSE(plan_feasible(full, reg, in.device));
  EXPECT_THROW(plan_memory(reg, in.device, in.perf, {0, 0}, Policy::coserve), ConfigError);
}

TEST(PlanMemory, UmaSharesOnePool) {
  auto in = board_inputs(uma_m2());
  const auto plan = plan_memory(*in.registry, in.device, in.perf, {2, 1}, Policy::samba_parallel);
  for (const auto& e : plan.executors) EXPECT_EQ(e.expert_budget + e.inference_budget, gigabytes(8));
  EXPECT_EQ(plan.host_cache_bytes, 0u);
}

// Oracle: the largest count whose per-GPU share still leaves room for a
// one-item batch of the hungriest architecture.
int feasible_oracle(const SimulationInputs& in, Layout layout) {
  Bytes need = 0;
  for (const auto& a : in.registry->archs())
    need = std::max(need, inference_memory(in.device.constants(a.id, Processor::gpu), 1));
  const Bytes memory = in.device.tier(Tier::device).capacity_bytes / static_cast<Bytes>(layout.gpu);
  int best = 0;
  for (int c = 1; c <= static_cast<int>(in.registry->size()); ++c) {
    const Bytes experts = static_cast<Bytes>((c + layout.gpu - 1) / layout.gpu) * megabytes(200);
    if (experts <= memory && memory - experts >= need) best = c;
  }
  return best;
}

TEST(MemorySearch, FeasibleCountMatchesOracle) {
  const auto in = board_inputs();
  for (Layout l : {Layout{1, 0}, Layout{2, 1}, Layout{3, 1}, Layout{4, 0}})
    EXPECT_EQ(max_feasible_experts(in, l), feasible_oracle(in, l)) << to_string(l);
}

TEST(MemorySearch, ChoosesInsideFeasibleWindow) {
  const auto in = board_inputs();
  const Layout layout{3, 1};
  const auto sample = search_sample(*in.registry, 1, 200);
  const auto r = search_memory_allocation(in, layout, sample, 1);
  EXPECT_LE(r.lower, r.chosen);
  EXPECT_LE(r.chosen, r.upper);
  EXPECT_LE(r.upper, max_feasible_experts(in, layout));
  EXPECT_EQ(r, search_memory_allocation(in, layout, sample, 1));
  EXPECT_GT(sample_throughput(in, layout, Policy::coserve, sample, 1, r.chosen), 0.0);
  EXPECT_EQ(sample_throughput(in, layout, Policy::coserve, sample, 1, 60), 0.0);
  EXPECT_THROW(search_memory_allocation(in, layout, {}, 1), ConfigError);
}

TEST(RunOnce, SearchesOnlyWhenNeeded) {
  const auto in = board_inputs();
  RunOptions o;
  o.num_requests = 200;
  o.layout = {2, 1};
  const auto searched = run_once(in, o);
  ASSERT_TRUE(searched.search);
  EXPECT_EQ(searched.options.gpu_experts, searched.search->chosen);
  EXPECT_EQ(searched.result.metrics.completed_requests, 200u);
  EXPECT_EQ(run_once(in, o).result.metrics, searched.result.metrics);

  o.gpu_experts = 20;
  EXPECT_FALSE(run_once(in, o).search);
  o.gpu_experts.reset();
  o.policy = Policy::samba_lru;
  o.layout = {1, 0};
  EXPECT_FALSE(run_once(in, o).search);
}

TEST(Summary, MeanAndSampleStdev) {
  const auto s = summarize({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.stdev, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(summarize({3.0}).stdev, 0.0);
  EXPECT_EQ(summarize({}).mean, 0.0);
}

TEST(ParallelMap, KeepsJobOrder) {
  std::vector<std::function<int()>> jobs;
  for (int i = 0; i < 9; ++i) jobs.push_back([i] { return i * i; });
  const auto out = parallel_map(jobs, 4);
  for (int i = 0; i < 9; ++i) EXPECT_EQ(out[i], i * i);
}

TEST(Compare, RowsAndRatios) {
  const auto in = board_inputs();
  CompareOptions opt;
  opt.num_requests = 300;
  opt.seeds = {1, 2};
  opt.coserve_layouts = {{2, 0}, {2, 1}};
  opt.ablation = true;
  opt.workers = 2;
  const auto cmp = compare(in, opt);
  EXPECT_EQ(cmp.layout_sweep.size(), 2u);
  EXPECT_EQ(cmp.rows.size(), 7u);
  const auto& lru = cmp.row(Policy::samba_lru);
  EXPECT_DOUBLE_EQ(lru.ratio_vs_samba_lru, 1.0);
  EXPECT_DOUBLE_EQ(lru.switch_reduction_vs_samba_lru, 0.0);
  EXPECT_EQ(lru.layout, (Layout{1, 0}));
  const auto& best = cmp.row(Policy::coserve);
  EXPECT_EQ(best.layout, cmp.best_layout);
  for (const auto& r : cmp.layout_sweep) EXPECT_LE(r.throughput.mean, best.throughput.mean);
  EXPECT_NEAR(best.ratio_vs_samba_lru, best.throughput.mean / lru.throughput.mean, 1e-12);
  // ablation variants reuse the searched counts of full CoServe
  const auto& em = cmp.row(Policy::coserve_em);
  for (std::size_t i = 0; i < em.runs.size(); ++i) {
    EXPECT_EQ(em.runs[i].options.gpu_experts, best.runs[i].options.gpu_experts);
    EXPECT_FALSE(em.runs[i].search);
  }
  EXPECT_EQ(best.runs.size(), 2u);
}

}  // namespace
}  // namespace coe
