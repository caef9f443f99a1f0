// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "coe/coe.hpp"

namespace coe::testing {

inline ExecConstants constants(double k, double b, int n_sat = 8, double gamma = 1.5, double base_mb = 100,
                               double per_item_mb = 300) {
  return {k, b, n_sat, gamma, megabytes(base_mb), megabytes(per_item_mb)};
}

// Flat registry of `n` classification experts with the given probabilities
// (one component each) and optional detection experts.
struct RegistryBuilder {
  std::vector<ArchClass> archs{{"cls", ArchKind::classification}, {"det", ArchKind::detection}};
  std::vector<ExpertSpec> experts;
  std::vector<RoutingRule> rules;
  std::vector<std::pair<std::string, double>> mix;

  RegistryBuilder& cls(const std::string& id, double prob, Bytes bytes = megabytes(200)) {
    experts.push_back({id, "cls", bytes, {}, prob});
    rules.push_back({"c_" + id, id, std::nullopt, 0.0});
    mix.emplace_back("c_" + id, prob);
    return *this;
  }

  RegistryBuilder& det(const std::string& id, std::vector<std::string> upstream, double prob,
                       Bytes bytes = megabytes(200)) {
    for (const auto& up : upstream)
      for (auto& r : rules)
        if (r.classification_expert == up) {
          r.detection_expert = id;
          r.detection_prob = 1.0;
        }
    experts.push_back({id, "det", bytes, std::move(upstream), prob});
    return *this;
  }

  ModelRegistry build(const std::string& name = "test") const {
    auto m = mix;
    double total = 0.0;
    for (auto& [_, f] : m) total += f;
    if (total > 0.0)
      for (auto& [_, f] : m) f /= total;
    else
      for (auto& [_, f] : m) f = 1.0 / static_cast<double>(m.size());
    return ModelRegistry(name, archs, experts, rules, m);
  }
};

inline DeviceProfile toy_device(Bytes device_gb = gigabytes(4)) {
  DeviceProfile d;
  d.name = "toy";
  d.architecture = MemoryArch::numa;
  d.tiers = {{Tier::device, device_gb, 400e9, 0.0},
             {Tier::host, gigabytes(8), 10e9, 0.0},
             {Tier::ssd, 0, 500e6, 0.0}};
  for (const char* arch : {"cls", "det"}) {
    d.exec_constants[{arch, Processor::gpu}] = constants(0.01, 0.05, 8, 2.0, 50, 50);
    d.exec_constants[{arch, Processor::cpu}] = constants(0.05, 0.05, 4, 2.0, 10, 10);
  }
  return d;
}

inline std::shared_ptr<const ModelRegistry> board_a() {
  static const auto reg = std::make_shared<const ModelRegistry>(generate_registry(board_params("board-a")));
  return reg;
}

}  // namespace coe::testing
