// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "coe/types.hpp"

namespace coe {

// Chain template for a component type. The second stage, when present, runs
// with probability `branch_prob`; the engine resolves the branch.
struct Route {
  std::vector<std::string> chain;
  double branch_prob = 0.0;
};

inline const RoutingRule& find_rule(const std::string& component_type, const std::vector<RoutingRule>& rules) {
  for (const auto& r : rules)
    if (r.component_type == component_type) return r;
  throw ConfigError("no routing rule for component type '" + component_type + "'");
}

inline Route route(const std::string& component_type, const std::vector<RoutingRule>& rules) {
  const auto& rule = find_rule(component_type, rules);
  Route r;
  r.chain.push_back(rule.classification_expert);
  if (rule.detection_expert) {
    r.chain.push_back(*rule.detection_expert);
    r.branch_prob = rule.detection_prob;
  }
  return r;
}

using ComponentMix = std::vector<std::pair<std::string, double>>;

inline void check_mix(const ComponentMix& mix) {
  double total = 0.0;
  for (const auto& [type, f] : mix) {
    if (!(f >= 0.0)) throw ConfigError("component '" + type + "' has negative frequency");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("component frequencies sum to " + std::to_string(total) + ", expected 1");
}

// Usage probability of every expert, defined over expert invocations: each
// external request invokes its classification expert once and its detection
// expert with the rule's branch probability. Probabilities sum to 1.
inline std::map<std::string, double> compute_usage_probs(const std::vector<RoutingRule>& rules,
                                                         const ComponentMix& mix) {
  check_mix(mix);
  std::map<std::string, double> expected;
  double invocations = 0.0;
  for (const auto& [type, freq] : mix) {
    const auto& rule = find_rule(type, rules);
    expected[rule.classification_expert] += freq;
    invocations += freq;
    if (rule.detection_expert) {
      expected[*rule.detection_expert] += freq * rule.detection_prob;
      invocations += freq * rule.detection_prob;
    }
  }
  // experts that are never invoked still get an entry
  for (const auto& r : rules) {
    expected.try_emplace(r.classification_expert, 0.0);
    if (r.detection_expert) expected.try_emplace(*r.detection_expert, 0.0);
  }
  if (invocations > 0.0)
    for (auto& [id, p] : expected) p /= invocations;
  return expected;
}

// Sampled estimate of the same quantity: route `samples` requests drawn from
// the mix, resolve branches, and count invocations.
inline std::map<std::string, double> estimate_usage_probs(const std::vector<RoutingRule>& rules,
                                                          const ComponentMix& mix, std::size_t samples,
                                                          std::uint64_t seed) {
  check_mix(mix);
  std::vector<double> weights;
  std::vector<const RoutingRule*> mapped;
  for (const auto& [type, freq] : mix) {
    weights.push_back(freq);
    mapped.push_back(&find_rule(type, rules));
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::map<std::string, double> counts;
  for (const auto& r : rules) {
    counts.try_emplace(r.classification_expert, 0.0);
    if (r.detection_expert) counts.try_emplace(*r.detection_expert, 0.0);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto* rule = mapped[pick(rng)];
    counts[rule->classification_expert] += 1.0;
    total += 1.0;
    if (rule->detection_expert && coin(rng) < rule->detection_prob) {
      counts[*rule->detection_expert] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0)
    for (auto& [id, c] : counts) c /= total;
  return counts;
}

}  // namespace coe
