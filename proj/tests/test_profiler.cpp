// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "helpers.hpp"

namespace coe {
namespace {

using testing::constants;

// Brute-force plateau scan, written independently of the profiler.
int plateau_oracle(const ExecConstants& c, double threshold, int cap) {
  std::vector<double> avg{0.0};
  for (int n = 1; n <= cap + 1; ++n)
    avg.push_back(n <= c.n_sat ? (c.k_s * n + c.b_s) / n
                               : (c.k_s * c.n_sat + c.b_s + c.gamma * c.k_s * (n - c.n_sat)) / n);
  for (int n = 1; n < cap; ++n)
    if ((avg[n] - avg[n + 1]) / avg[n] < threshold) return n;
  return cap;
}

TEST(MaxBatch, Examples) {
  const auto c = constants(0.02, 0.1, 8, 1.5, 0, 1);
  const int mb = profile_max_batch(c, gigabytes(100));
  EXPECT_GE(mb, 6);
  EXPECT_LE(mb, 8);
  EXPECT_EQ(mb, plateau_oracle(c, 0.02, 1 << 16));
  EXPECT_EQ(profile_max_batch(constants(0.02, 0.0, 8, 1.5, 0, 1), gigabytes(1)), 1);
}

TEST(MaxBatch, MemoryCapped) {
  const auto c = constants(0.02, 0.1, 8, 1.5, 100, 300);
  EXPECT_EQ(profile_max_batch(c, megabytes(1000)), 3);
  EXPECT_EQ(profile_max_batch(c, megabytes(10)), 1);
}

TEST(MaxBatch, PresetValues) {
  const auto d = numa_3080ti();
  EXPECT_EQ(profile_max_batch("resnet101", Processor::gpu, d), 8);
  EXPECT_EQ(profile_max_batch("yolov5l", Processor::gpu, d), 6);
  EXPECT_EQ(profile_max_batch("yolov5l", Processor::cpu, d), 3);
}

TEST(LinearFit, Examples) {
  const auto two = fit_linear_latency({{1, 0.12}, {2, 0.14}});
  EXPECT_NEAR(two.k_s, 0.02, 1e-12);
  EXPECT_NEAR(two.b_s, 0.1, 1e-12);
  EXPECT_THROW(fit_linear_latency({{1, 0.12}}), ConfigError);
  EXPECT_THROW(fit_linear_latency({{2, 0.12}, {2, 0.2}}), ConfigError);

  DeviceProfile d = testing::toy_device();
  d.exec_constants[{"cls", Processor::gpu}] = constants(0.02, 0.1, 8, 1.5);
  const auto exact = fit_linear_latency("cls", Processor::gpu, d, 8);
  EXPECT_NEAR(exact.k_s, 0.02, 0.02 * 1e-9);
  EXPECT_NEAR(exact.b_s, 0.1, 0.1 * 1e-9);
  // saturated samples are left out of the fit
  const auto past = fit_linear_latency("cls", Processor::gpu, d, 12);
  EXPECT_NEAR(past.k_s, 0.02, 0.02 * 1e-9);
  EXPECT_NEAR(past.b_s, 0.1, 0.1 * 1e-9);
  EXPECT_GT(fit_linear_latency({{1, 0.12}, {8, 0.26}, {9, 0.29}}).k_s, 0.02);
  EXPECT_EQ(linear_region({{1, 0.12}, {2, 0.14}, {3, 0.16}, {4, 0.19}}).size(), 3u);
}

TEST(Profile, DeviceProfileContents) {
  const auto d = numa_3080ti();
  const auto perf = profile_device(d, *testing::board_a());
  EXPECT_EQ(perf.entries().size(), 6u);
  const auto& e = perf.at("yolov5m", Processor::gpu);
  EXPECT_EQ(e.max_batch, 6);
  EXPECT_NEAR(e.k_s, 0.006, 1e-12);
  EXPECT_NEAR(e.b_s, 0.03, 1e-12);
  EXPECT_NEAR(e.load_latency(Tier::ssd), 200e6 / 530e6 + 0.01, 1e-12);
  EXPECT_NEAR(e.load_latency(Tier::host), 200e6 / 12e9 + 0.005, 1e-12);
  EXPECT_THROW(e.load_latency(Tier::device), ConfigError);
  EXPECT_DOUBLE_EQ(e.memory_score, 1.0);
  EXPECT_THROW(perf.at("nope", Processor::gpu), ConfigError);
  EXPECT_EQ(profile_device(d, *testing::board_a()), perf);
}

TEST(Profile, MemoryScoreNormalized) {
  auto p = board_params("board-a");
  p.size_jitter = 0.25;
  const auto reg = generate_registry(p);
  const auto perf = profile_device(numa_3080ti(), reg);
  double top = 0.0;
  for (const auto& [_, e] : perf.entries()) {
    EXPECT_GT(e.memory_score, 0.0);
    EXPECT_LE(e.memory_score, 1.0);
    top = std::max(top, e.memory_score);
  }
  EXPECT_DOUBLE_EQ(top, 1.0);
}

TEST(AllocationMode, Threshold) {
  // base 0, per item 1 MB: max_batch items need max_batch MB.
  const auto c = constants(0.02, 0.1, 8, 1.5, 0, 1);
  EXPECT_EQ(decide_allocation_mode(c, 15, megabytes(100)), AllocationMode::max_batch_reserve);
  EXPECT_EQ(decide_allocation_mode(c, 40, megabytes(100)), AllocationMode::window_search);
  EXPECT_EQ(decide_allocation_mode(c, 2, megabytes(100)), AllocationMode::max_batch_reserve);
  const auto perf = profile_device(numa_3080ti(), *testing::board_a());
  EXPECT_EQ(decide_allocation_mode("resnet101", Processor::cpu, numa_3080ti(), perf, gigabytes(8)),
            AllocationMode::max_batch_reserve);
}

TEST(WindowSearch, DecayFactorAndWindows) {
  EXPECT_DOUBLE_EQ(decay_factor(15), 0.85);
  // Monotonically rising curve: runs to exhaustion.
  const auto r = search_window(60, [](int n) { return 2.0 * n + 1.0; });
  ASSERT_GE(r.windows.size(), 3u);
  EXPECT_EQ(r.windows[0], std::make_pair(0, 15));
  EXPECT_EQ(r.windows[1], std::make_pair(15, 28));
  EXPECT_EQ(r.windows[2], std::make_pair(28, 39));
  EXPECT_TRUE(r.exhausted);
  EXPECT_FALSE(r.stopped_on_error);
  EXPECT_EQ(r.upper, 60);
  for (std::size_t i = 1; i < r.windows.size(); ++i) {
    const auto [lo0, hi0] = r.windows[i - 1];
    const auto [lo1, hi1] = r.windows[i];
    EXPECT_EQ(lo1, hi0);
    if (hi1 < 60) {
      EXPECT_LT(hi1 - lo1, hi0 - lo0);
    }
  }
}

// Independent oracle for the window sequence: sizes decay geometrically and
// are rounded up, each strictly smaller than the last.
std::vector<std::pair<int, int>> window_oracle(int total, int w0) {
  std::vector<std::pair<int, int>> out;
  double real = w0;
  int size = w0, lo = 0;
  while (true) {
    const int hi = std::min(lo + size, total);
    out.emplace_back(lo, hi);
    if (hi >= total) return out;
    real *= 1.0 - w0 / 100.0;
    int next = static_cast<int>(std::ceil(real - 1e-9));
    if (next >= size) next = size - 1;
    if (next < 1) return out;
    size = next;
    lo = hi;
  }
}

TEST(WindowSearch, MatchesOracleSequence) {
  for (int w0 : {5, 10, 15, 30}) {
    const auto r = search_window(1000, [](int n) { return static_cast<double>(n); }, {w0, 0.05, 3});
    EXPECT_EQ(r.windows, window_oracle(1000, w0)) << w0;
  }
  const auto frozen = window_oracle(1000, 15);
  const std::vector<std::pair<int, int>> head{{0, 15}, {15, 28}, {28, 39}, {39, 49}, {49, 57}, {57, 64}};
  EXPECT_TRUE(std::equal(head.begin(), head.end(), frozen.begin()));
}

TEST(WindowSearch, StopsAfterPeak) {
  // rises to 40, then falls steeply
  auto curve = [](int n) { return n <= 40 ? 5.0 + 0.5 * n : 25.0 - 1.5 * (n - 40); };
  const auto r = search_window(372, curve, {15, 0.05, 3, ChooseMode::midpoint, 1});
  EXPECT_TRUE(r.stopped_on_error);
  EXPECT_GT(r.linear_error, 0.05);
  EXPECT_EQ(r.lower, 39);
  EXPECT_EQ(r.upper, 49);
  EXPECT_EQ(r.chosen, 44);
  EXPECT_LE(r.lower, 40);
  EXPECT_GE(r.upper, 40);
}

TEST(WindowSearch, ChooseWithinWindow) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const int c = choose_in_window(28, 39, ChooseMode::random, seed);
    EXPECT_GE(c, 28);
    EXPECT_LE(c, 39);
  }
  EXPECT_EQ(choose_in_window(28, 39, ChooseMode::random, 3), choose_in_window(28, 39, ChooseMode::random, 3));
  EXPECT_EQ(choose_in_window(0, 15, ChooseMode::midpoint, 0), 8);
}

TEST(WindowSearch, CollapseAndSmallTotals) {
  const auto small = search_window(10, [](int n) { return static_cast<double>(n); });
  EXPECT_TRUE(small.exhausted);
  EXPECT_EQ(small.upper, 10);
  // w0 = 2 decays to one expert and cannot shrink further
  const auto collapse = search_window(1000, [](int n) { return static_cast<double>(n); }, {2, 0.05, 3});
  EXPECT_TRUE(collapse.collapsed);
  EXPECT_THROW(search_window(0, [](int) { return 1.0; }), ConfigError);
}

}  // namespace
}  // namespace coe
