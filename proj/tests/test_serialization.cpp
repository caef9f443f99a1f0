// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <gtest/gtest.h>

#include "helpers.hpp"

namespace coe {
namespace {

template <typename T, typename Read>
void expect_round_trip(const T& value, Read read) {
  const auto text = to_json(value).dump();
  EXPECT_EQ(read(json::parse(text)), value);
}

TEST(Serialization, RegistryRoundTrip) {
  auto p = board_params("board-b");
  p.size_jitter = 0.25;
  const auto reg = generate_registry(p);
  expect_round_trip(reg, registry_from_json);
}

TEST(Serialization, DeviceRoundTrip) {
  expect_round_trip(numa_3080ti(), device_from_json);
  expect_round_trip(uma_m2(), device_from_json);
}

TEST(Serialization, PerfEntryRoundTrip) {
  const auto perf = profile_device(numa_3080ti(), *testing::board_a());
  for (const auto& [key, entry] : perf.entries()) {
    const auto [device, back] = perf_entry_from_json(json::parse(to_json(entry, "numa-3080ti").dump()));
    EXPECT_EQ(device, "numa-3080ti");
    EXPECT_EQ(back, entry);
  }
}

TEST(Serialization, WindowRoundTrip) {
  WindowSearchResult r;
  r.lower = 28;
  r.upper = 39;
  r.chosen = 35;
  r.throughput_samples = {{15, 10.5}, {28, 20.25}, {39, 18.0}};
  r.windows = {{0, 15}, {15, 28}, {28, 39}};
  r.linear_error = 0.077;
  r.stopped_on_error = true;
  expect_round_trip(r, window_search_from_json);
}

TEST(Serialization, MetricsRoundTrip) {
  Metrics m;
  m.policy = Policy::coserve_em_ra;
  m.throughput_rps = 25.4;
  m.expert_switches = 65;
  m.makespan_s = 98.5;
  m.external_requests = m.completed_requests = 2500;
  m.executors = {{0, Processor::gpu, 1.0, 0.5, 3, 4, 5}, {1, Processor::cpu, 2.0, 0.25, 6, 7, 8}};
  expect_round_trip(m, metrics_from_json);
}

TEST(Serialization, StreamRoundTrip) {
  const auto reg = testing::board_a();
  const auto stream = generate_stream(*reg, {50, 0.004, 3});
  EXPECT_EQ(stream_from_json(json::parse(stream_to_json(*reg, stream).dump()), *reg), stream);
}

TEST(Serialization, RejectsUnknownFields) {
  auto j = to_json(numa_3080ti());
  j["extra"] = 1;
  EXPECT_THROW(device_from_json(j), ConfigError);

  auto nested = to_json(numa_3080ti());
  nested["tiers"][0]["colour"] = "blue";
  EXPECT_THROW(device_from_json(nested), ConfigError);

  auto reg = to_json(*testing::board_a());
  reg["experts"][0]["weights"] = "x";
  EXPECT_THROW(registry_from_json(reg), ConfigError);
}

TEST(Serialization, RejectsWrongHeader) {
  auto j = to_json(numa_3080ti());
  j["schema_version"] = 2;
  EXPECT_THROW(device_from_json(j), ConfigError);
  EXPECT_THROW(registry_from_json(to_json(numa_3080ti())), ConfigError);
  auto missing = to_json(numa_3080ti());
  missing.erase("name");
  EXPECT_THROW(device_from_json(missing), ConfigError);
  auto type = to_json(numa_3080ti());
  type["name"] = 5;
  EXPECT_THROW(device_from_json(type), ConfigError);
}

TEST(Serialization, ShippedDeviceFilesMatchPresets) {
  for (const auto& name : device_preset_names())
    EXPECT_EQ(device_from_json(read_json_file(std::string(COE_DATA_DIR) + "/devices/" + name + ".json")),
              device_preset(name))
        << name;
}

TEST(Serialization, TraceLines) {
  const auto reg = testing::board_a();
  std::ostringstream out;
  write_trace(out, {{1.5, 0, "load_ssd", ExpertIndex{0}, std::nullopt}, {2.0, -1, "arrival", ExpertIndex{1}, 7}},
              *reg);
  EXPECT_EQ(out.str(),
            "{\"time_s\":1.5,\"executor\":0,\"event\":\"load_ssd\",\"expert_id\":\"cls_000\",\"request_id\":null}\n"
            "{\"time_s\":2.0,\"executor\":-1,\"event\":\"arrival\",\"expert_id\":\"cls_001\",\"request_id\":7}\n");
}

}  // namespace
}  // namespace coe
