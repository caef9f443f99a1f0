// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coe/random.hpp"
#include "coe/routing.hpp"
#include "coe/types.hpp"

namespace coe {

// Circuit-board style workloads: one classification expert per component type,
// a share of the components routed onward to a small set of shared detection
// experts, and a Zipf-distributed component mix. The true per-board quantity
// distribution is not public; Zipf is a stand-in.
struct RegistryParams {
  std::string name = "custom";
  int num_components = 352;
  int num_detection_experts = 20;
  double detection_coverage = 0.5;
  double zipf_s = 1.0;
  Bytes expert_bytes = megabytes(200);
  double size_jitter = 0.0;  // +- fraction of expert_bytes, seeded
  std::uint64_t seed = 1;
};

struct StreamParams {
  int num_requests = 2500;
  double interarrival_s = 0.004;
  std::uint64_t seed = 1;
};

inline const char* kClassificationArch = "resnet101";
inline const char* kDetectionArchs[] = {"yolov5m", "yolov5l"};

inline std::vector<double> zipf_weights(int n, double s) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = std::pow(static_cast<double>(i + 1), -s);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return w;
}

namespace detail {
inline std::string numbered(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%0*d", prefix, width, i);
  return buf;
}
}  // namespace detail

inline ModelRegistry generate_registry(const RegistryParams& p) {
  if (p.num_components < 1) throw ConfigError("num_components must be >= 1");
  if (!(p.detection_coverage >= 0.0 && p.detection_coverage <= 1.0))
    throw ConfigError("detection_coverage must lie in [0,1]");
  if (p.num_detection_experts < 0) throw ConfigError("num_detection_experts must be >= 0");
  if (p.detection_coverage > 0.0 && p.num_detection_experts == 0)
    throw ConfigError("detection_coverage > 0 needs at least one detection expert");
  if (!(p.size_jitter >= 0.0 && p.size_jitter < 1.0)) throw ConfigError("size_jitter must lie in [0,1)");
  if (p.expert_bytes == 0) throw ConfigError("expert_bytes must be > 0");

  std::mt19937_64 rng(p.seed);
  const int n = p.num_components;
  const int cls_width = n > 1000 ? 4 : 3;

  std::vector<ArchClass> archs{{kClassificationArch, ArchKind::classification}};
  if (p.num_detection_experts > 0) archs.push_back({kDetectionArchs[0], ArchKind::detection});
  if (p.num_detection_experts > 1) archs.push_back({kDetectionArchs[1], ArchKind::detection});

  std::uniform_real_distribution<double> jitter(-p.size_jitter, p.size_jitter);
  auto draw_bytes = [&] {
    if (p.size_jitter == 0.0) return p.expert_bytes;
    return static_cast<Bytes>(std::llround(static_cast<double>(p.expert_bytes) * (1.0 + jitter(rng))));
  };

  std::vector<ExpertSpec> experts;
  std::vector<RoutingRule> rules;
  for (int i = 0; i < n; ++i) {
    ExpertSpec e;
    e.expert_id = detail::numbered("cls", i, cls_width);
    e.arch = kClassificationArch;
    e.param_bytes = draw_bytes();
    experts.push_back(std::move(e));
    rules.push_back({detail::numbered("comp", i, cls_width), experts.back().expert_id, std::nullopt, 0.0});
  }

  // Seeded choice of which components are routed onward, and to which
  // detection expert.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const int mapped = static_cast<int>(std::lround(p.detection_coverage * n));
  std::vector<std::vector<std::string>> upstream(static_cast<std::size_t>(p.num_detection_experts));
  std::uniform_int_distribution<int> pick_det(0, std::max(0, p.num_detection_experts - 1));
  std::uniform_real_distribution<double> pick_prob(0.5, 1.0);
  std::vector<std::string> det_ids;
  for (int d = 0; d < p.num_detection_experts; ++d) det_ids.push_back(detail::numbered("det", d, 2));
  std::sort(order.begin(), order.begin() + mapped);
  for (int j = 0; j < mapped; ++j) {
    const int comp = order[j];
    const int d = pick_det(rng);
    rules[comp].detection_expert = det_ids[d];
    rules[comp].detection_prob = pick_prob(rng);
    upstream[d].push_back(rules[comp].classification_expert);
  }
  for (int d = 0; d < p.num_detection_experts; ++d) {
    ExpertSpec e;
    e.expert_id = det_ids[d];
    e.arch = kDetectionArchs[d % 2];
    e.param_bytes = draw_bytes();
    e.upstream = std::move(upstream[d]);
    experts.push_back(std::move(e));
  }

  const auto weights = zipf_weights(n, p.zipf_s);
  ComponentMix mix;
  for (int i = 0; i < n; ++i) mix.emplace_back(rules[i].component_type, weights[i]);
  // renormalize against rounding so the mix passes the 1e-9 check exactly
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& m : mix) m.second /= total;

  const auto probs = compute_usage_probs(rules, mix);
  for (auto& e : experts) {
    auto it = probs.find(e.expert_id);
    e.usage_prob = it == probs.end() ? 0.0 : it->second;
  }
  return ModelRegistry(p.name, std::move(archs), std::move(experts), std::move(rules), std::move(mix));
}

inline std::vector<Request> generate_stream(const ModelRegistry& registry, const StreamParams& p) {
  if (p.num_requests < 0) throw ConfigError("num_requests must be >= 0");
  if (p.interarrival_s < 0.0) throw ConfigError("interarrival must be >= 0");
  if (registry.num_components() == 0) throw ConfigError("registry has no routing rules");
  const auto& w = registry.component_weights();
  std::mt19937_64 rng(p.seed);
  std::discrete_distribution<std::uint32_t> pick(w.begin(), w.end());
  std::vector<Request> stream;
  stream.reserve(static_cast<std::size_t>(p.num_requests));
  for (int i = 0; i < p.num_requests; ++i) {
    Request r;
    r.request_id = static_cast<RequestId>(i);
    r.component = ComponentIndex{pick(rng)};
    r.arrival_time_s = i * p.interarrival_s;
    r.chain.push_back(registry.classification_expert(r.component));
    if (auto det = registry.detection_expert(r.component)) r.chain.push_back(*det);
    stream.push_back(std::move(r));
  }
  return stream;
}

// Named boards and tasks.

inline RegistryParams board_params(const std::string& board) {
  RegistryParams p;
  p.name = board;
  if (board == "board-a") {
    p.num_components = 352;
  } else if (board == "board-b") {
    p.num_components = 342;
  } else {
    throw ConfigError("unknown registry preset '" + board + "' (expected board-a or board-b)");
  }
  // A board is a fixed product: its registry does not depend on the run seed.
  p.seed = derive_seed(2025, board);
  return p;
}

struct TaskPreset {
  std::string board;
  int num_requests = 0;
};

inline TaskPreset task_preset(const std::string& task) {
  if (task == "a1") return {"board-a", 2500};
  if (task == "a2") return {"board-a", 3500};
  if (task == "b1") return {"board-b", 2500};
  if (task == "b2") return {"board-b", 3500};
  throw ConfigError("unknown task preset '" + task + "' (expected a1, a2, b1 or b2)");
}

}  // namespace coe
