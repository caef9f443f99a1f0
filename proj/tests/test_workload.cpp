// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include <gtest/gtest.h>

#include "helpers.hpp"

namespace coe {
namespace {

TEST(Registry, BoardPresets) {
  const auto a = generate_registry(board_params("board-a"));
  const auto b = generate_registry(board_params("board-b"));
  EXPECT_EQ(a.num_components(), 352u);
  EXPECT_EQ(b.num_components(), 342u);
  EXPECT_EQ(a.size(), 352u + 20u);
  EXPECT_THROW(board_params("board-c"), ConfigError);
  EXPECT_EQ(generate_registry(board_params("board-a")), a);
}

TEST(Registry, StructureOfGeneratedBoard) {
  const auto& reg = *testing::board_a();
  int mapped = 0;
  double total = 0.0;
  for (std::uint32_t c = 0; c < reg.num_components(); ++c) {
    const auto& rule = reg.rule(ComponentIndex{c});
    if (rule.detection_expert) {
      ++mapped;
      EXPECT_GE(rule.detection_prob, 0.5);
      EXPECT_LE(rule.detection_prob, 1.0);
      // the detection expert consumes this component's classification output
      const auto det = *reg.detection_expert(ComponentIndex{c});
      const auto& ups = reg.upstream(det);
      EXPECT_NE(std::find(ups.begin(), ups.end(), reg.classification_expert(ComponentIndex{c})), ups.end());
    }
  }
  EXPECT_EQ(mapped, 176);
  for (const auto& e : reg.experts()) {
    total += e.usage_prob;
    EXPECT_EQ(e.param_bytes, megabytes(200));
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Registry, SingleSharedDetectionExpert) {
  RegistryParams p;
  p.num_components = 30;
  p.num_detection_experts = 1;
  p.detection_coverage = 1.0;
  const auto reg = generate_registry(p);
  const auto det = reg.expert_index("det_00");
  for (std::uint32_t c = 0; c < reg.num_components(); ++c) EXPECT_EQ(reg.detection_expert(ComponentIndex{c}), det);
  EXPECT_EQ(reg.upstream(det).size(), 30u);
}

TEST(Registry, ZipfZeroIsUniform) {
  RegistryParams p;
  p.num_components = 40;
  p.detection_coverage = 0.0;
  p.num_detection_experts = 0;
  p.zipf_s = 0.0;
  const auto reg = generate_registry(p);
  for (const auto& e : reg.experts()) EXPECT_NEAR(e.usage_prob, 1.0 / 40, 1e-12);
}

TEST(Registry, SizeJitterStaysInBand) {
  RegistryParams p;
  p.size_jitter = 0.25;
  const auto reg = generate_registry(p);
  std::set<Bytes> sizes;
  for (const auto& e : reg.experts()) {
    EXPECT_GE(e.param_bytes, megabytes(150));
    EXPECT_LE(e.param_bytes, megabytes(250));
    sizes.insert(e.param_bytes);
  }
  EXPECT_GT(sizes.size(), 100u);
}

TEST(Registry, RejectsBadParams) {
  RegistryParams p;
  p.detection_coverage = 1.5;
  EXPECT_THROW(generate_registry(p), ConfigError);
  p.detection_coverage = 0.5;
  p.num_components = 0;
  EXPECT_THROW(generate_registry(p), ConfigError);
}

TEST(Stream, TaskPresets) {
  const auto reg = testing::board_a();
  const auto t = task_preset("a1");
  const auto stream = generate_stream(*reg, {t.num_requests, 0.004, 1});
  ASSERT_EQ(stream.size(), 2500u);
  EXPECT_DOUBLE_EQ(stream.front().arrival_time_s, 0.0);
  EXPECT_NEAR(stream.back().arrival_time_s, 9.996, 1e-9);
  EXPECT_EQ(task_preset("a2").num_requests, 3500);
  EXPECT_EQ(task_preset("b1").board, "board-b");
  EXPECT_THROW(task_preset("c1"), ConfigError);
}

TEST(Stream, SingleRequestAndReproducibility) {
  const auto reg = testing::board_a();
  const auto one = generate_stream(*reg, {1, 0.004, 9});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].arrival_time_s, 0.0);
  EXPECT_EQ(generate_stream(*reg, {300, 0.004, 9}), generate_stream(*reg, {300, 0.004, 9}));
  EXPECT_NE(generate_stream(*reg, {300, 0.004, 9}), generate_stream(*reg, {300, 0.004, 10}));
}

TEST(Stream, ChainsFollowDependencies) {
  const auto reg = testing::board_a();
  for (const auto& r : generate_stream(*reg, {500, 0.004, 4})) {
    ASSERT_FALSE(r.chain.empty());
    EXPECT_EQ(r.origin, Origin::external);
    for (std::size_t i = 0; i + 1 < r.chain.size(); ++i) {
      const auto& ups = reg->upstream(r.chain[i + 1]);
      EXPECT_NE(std::find(ups.begin(), ups.end(), r.chain[i]), ups.end());
    }
  }
}

TEST(Stream, FrequenciesConvergeToMix) {
  const auto reg = testing::board_a();
  const auto stream = generate_stream(*reg, {100000, 0.004, 17});
  std::vector<double> counts(reg->num_components(), 0.0);
  for (const auto& r : stream) counts[to_underlying(r.component)] += 1.0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    EXPECT_NEAR(counts[c] / 100000.0, reg->component_weights()[c], 0.02) << c;
}

}  // namespace
}  // namespace coe
