// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace coe {

// Raised for malformed registries, device profiles, documents and unknown
// identifiers. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An executor cannot make progress: no room for even one batch item, or an
// expert does not fit its pool once every unpinned resident is gone.
class MemoryStarvation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ArchKind : std::uint8_t { classification, detection };
enum class Processor : std::uint8_t { gpu, cpu };
enum class Tier : std::uint8_t { device, host, ssd };
enum class MemoryArch : std::uint8_t { numa, uma };
enum class Origin : std::uint8_t { external, follow_up };

// Dense index of an expert inside a ModelRegistry.
enum class ExpertIndex : std::uint32_t {};
// Dense index of a component type (routing rule) inside a ModelRegistry.
enum class ComponentIndex : std::uint32_t {};

using RequestId = std::uint64_t;
using ExecutorId = int;
using Bytes = std::uint64_t;

constexpr std::uint32_t to_underlying(ExpertIndex e) { return static_cast<std::uint32_t>(e); }
constexpr std::uint32_t to_underlying(ComponentIndex c) { return static_cast<std::uint32_t>(c); }

constexpr Bytes megabytes(double mb) { return static_cast<Bytes>(mb * 1e6); }
constexpr Bytes gigabytes(double gb) { return static_cast<Bytes>(gb * 1e9); }

inline std::string_view to_string(ArchKind k) {
  return k == ArchKind::classification ? "classification" : "detection";
}
inline std::string_view to_string(Processor p) { return p == Processor::gpu ? "gpu" : "cpu"; }
inline std::string_view to_string(MemoryArch a) { return a == MemoryArch::numa ? "numa" : "uma"; }
inline std::string_view to_string(Origin o) { return o == Origin::external ? "external" : "follow_up"; }
inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::device: return "device";
    case Tier::host: return "host";
    case Tier::ssd: return "ssd";
  }
  return "?";
}

inline ArchKind parse_arch_kind(std::string_view s) {
  if (s == "classification") return ArchKind::classification;
  if (s == "detection") return ArchKind::detection;
  throw ConfigError("unknown architecture kind '" + std::string(s) + "'");
}
inline Processor parse_processor(std::string_view s) {
  if (s == "gpu") return Processor::gpu;
  if (s == "cpu") return Processor::cpu;
  throw ConfigError("unknown processor '" + std::string(s) + "'");
}
inline Tier parse_tier(std::string_view s) {
  if (s == "device") return Tier::device;
  if (s == "host") return Tier::host;
  if (s == "ssd") return Tier::ssd;
  throw ConfigError("unknown memory tier '" + std::string(s) + "'");
}
inline MemoryArch parse_memory_arch(std::string_view s) {
  if (s == "numa") return MemoryArch::numa;
  if (s == "uma") return MemoryArch::uma;
  throw ConfigError("unknown memory architecture '" + std::string(s) + "'");
}
inline Origin parse_origin(std::string_view s) {
  if (s == "external") return Origin::external;
  if (s == "follow_up") return Origin::follow_up;
  throw ConfigError("unknown request origin '" + std::string(s) + "'");
}

struct ArchClass {
  std::string id;
  ArchKind kind = ArchKind::classification;

  friend bool operator==(const ArchClass&, const ArchClass&) = default;
};

struct ExpertSpec {
  std::string expert_id;
  std::string arch;
  Bytes param_bytes = 0;
  std::vector<std::string> upstream;  // experts whose output this one consumes
  double usage_prob = 0.0;

  friend bool operator==(const ExpertSpec&, const ExpertSpec&) = default;
};

struct RoutingRule {
  std::string component_type;
  std::string classification_expert;
  std::optional<std::string> detection_expert;
  double detection_prob = 0.0;

  friend bool operator==(const RoutingRule&, const RoutingRule&) = default;
};

struct MemoryTier {
  Tier tier = Tier::ssd;
  Bytes capacity_bytes = 0;  // ignored for ssd (unbounded)
  double read_bandwidth_bytes_per_s = 1.0;
  double fixed_load_overhead_s = 0.0;

  friend bool operator==(const MemoryTier&, const MemoryTier&) = default;
};

// Execution constants of one architecture on one processor.
//   exec(n) = K*n + B                          for n <= n_sat
//   exec(n) = K*n_sat + B + gamma*K*(n-n_sat)  for n >  n_sat
struct ExecConstants {
  double k_s = 0.0;
  double b_s = 0.0;
  int n_sat = 1;
  double gamma = 1.0;
  Bytes intermediate_base_bytes = 0;
  Bytes intermediate_per_item_bytes = 0;

  friend bool operator==(const ExecConstants&, const ExecConstants&) = default;
};

using ExecKey = std::pair<std::string, Processor>;

struct DeviceProfile {
  std::string name;
  MemoryArch architecture = MemoryArch::numa;
  std::vector<MemoryTier> tiers;
  std::map<ExecKey, ExecConstants> exec_constants;

  friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;

  const MemoryTier* find_tier(Tier t) const {
    for (const auto& tier : tiers)
      if (tier.tier == t) return &tier;
    return nullptr;
  }

  const MemoryTier& tier(Tier t) const {
    if (const auto* found = find_tier(t)) return *found;
    throw ConfigError("device '" + name + "' has no " + std::string(to_string(t)) + " tier");
  }

  const ExecConstants& constants(const std::string& arch, Processor proc) const {
    auto it = exec_constants.find({arch, proc});
    if (it == exec_constants.end())
      throw ConfigError("device '" + name + "' has no execution constants for (" + arch + ", " +
                        std::string(to_string(proc)) + ")");
    return it->second;
  }

  // Memory from which executors of `proc` carve their pools and batches.
  Bytes processor_memory(Processor proc) const {
    if (architecture == MemoryArch::uma || proc == Processor::gpu) return tier(Tier::device).capacity_bytes;
    return tier(Tier::host).capacity_bytes;
  }

  void validate() const {
    if (name.empty()) throw ConfigError("device profile has empty name");
    for (std::size_t i = 0; i < tiers.size(); ++i) {
      const auto& t = tiers[i];
      if (!(t.read_bandwidth_bytes_per_s > 0.0))
        throw ConfigError("device '" + name + "': tier " + std::string(to_string(t.tier)) +
                          " needs positive read bandwidth");
      if (t.fixed_load_overhead_s < 0.0)
        throw ConfigError("device '" + name + "': negative load overhead");
      for (std::size_t j = i + 1; j < tiers.size(); ++j)
        if (tiers[j].tier == t.tier)
          throw ConfigError("device '" + name + "': duplicate tier " + std::string(to_string(t.tier)));
    }
    if (!find_tier(Tier::device) || !find_tier(Tier::ssd))
      throw ConfigError("device '" + name + "' needs device and ssd tiers");
    if (architecture == MemoryArch::numa && !find_tier(Tier::host))
      throw ConfigError("numa device '" + name + "' needs a host tier");
    // On uma a host entry only describes the unified-memory transfer path; it
    // cannot hold experts.
    if (architecture == MemoryArch::uma) {
      if (const auto* host = find_tier(Tier::host); host && host->capacity_bytes != 0)
        throw ConfigError("uma device '" + name + "': host transfer tier must have zero capacity");
    }
    for (const auto& [key, c] : exec_constants) {
      const auto where = "device '" + name + "' (" + key.first + ", " + std::string(to_string(key.second)) + ")";
      if (!(c.k_s > 0.0)) throw ConfigError(where + ": K must be > 0");
      if (c.b_s < 0.0) throw ConfigError(where + ": B must be >= 0");
      if (c.n_sat < 1) throw ConfigError(where + ": n_sat must be >= 1");
      if (!(c.gamma >= 1.0)) throw ConfigError(where + ": gamma must be >= 1");
    }
  }
};

// A unit of inference work. `chain` holds the remaining pipeline; the first
// element is the expert that serves the request next.
struct Request {
  RequestId request_id = 0;
  ComponentIndex component{};
  double arrival_time_s = 0.0;
  std::vector<ExpertIndex> chain;
  Origin origin = Origin::external;

  friend bool operator==(const Request&, const Request&) = default;
};

// Immutable catalogue of architectures, experts, routing rules and the
// component mix. Construction validates everything and builds dense indices.
class ModelRegistry {
 public:
  ModelRegistry() = default;

  ModelRegistry(std::string name, std::vector<ArchClass> archs, std::vector<ExpertSpec> experts,
                std::vector<RoutingRule> rules, std::vector<std::pair<std::string, double>> component_mix)
      : name_(std::move(name)),
        archs_(std::move(archs)),
        experts_(std::move(experts)),
        rules_(std::move(rules)),
        mix_(std::move(component_mix)) {
    index();
    validate();
  }

  const std::string& name() const { return name_; }
  const std::vector<ArchClass>& archs() const { return archs_; }
  const std::vector<ExpertSpec>& experts() const { return experts_; }
  const std::vector<RoutingRule>& rules() const { return rules_; }
  const std::vector<std::pair<std::string, double>>& component_mix() const { return mix_; }

  std::size_t size() const { return experts_.size(); }
  const ExpertSpec& expert(ExpertIndex e) const { return experts_[to_underlying(e)]; }
  const ArchClass& arch_of(ExpertIndex e) const { return archs_[expert_arch_[to_underlying(e)]]; }
  Bytes bytes(ExpertIndex e) const { return experts_[to_underlying(e)].param_bytes; }
  double usage_prob(ExpertIndex e) const { return experts_[to_underlying(e)].usage_prob; }
  const std::vector<ExpertIndex>& upstream(ExpertIndex e) const { return upstream_[to_underlying(e)]; }

  std::optional<ExpertIndex> find_expert(std::string_view id) const {
    auto it = expert_index_.find(std::string(id));
    if (it == expert_index_.end()) return std::nullopt;
    return it->second;
  }
  ExpertIndex expert_index(std::string_view id) const {
    if (auto e = find_expert(id)) return *e;
    throw ConfigError("unknown expert '" + std::string(id) + "'");
  }

  const ArchClass& arch(std::string_view id) const {
    for (const auto& a : archs_)
      if (a.id == id) return a;
    throw ConfigError("unknown architecture '" + std::string(id) + "'");
  }

  std::size_t num_components() const { return rules_.size(); }
  const RoutingRule& rule(ComponentIndex c) const { return rules_[to_underlying(c)]; }
  ComponentIndex component_index(std::string_view type) const {
    auto it = component_index_.find(std::string(type));
    if (it == component_index_.end()) throw ConfigError("unknown component type '" + std::string(type) + "'");
    return it->second;
  }
  ExpertIndex classification_expert(ComponentIndex c) const { return rule_cls_[to_underlying(c)]; }
  std::optional<ExpertIndex> detection_expert(ComponentIndex c) const { return rule_det_[to_underlying(c)]; }
  // Frequency of each component type, aligned with rules().
  const std::vector<double>& component_weights() const { return weights_; }

  // Experts ordered by descending usage probability; ties by ascending index.
  std::vector<ExpertIndex> by_descending_usage() const {
    std::vector<ExpertIndex> order(experts_.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = ExpertIndex{i};
    std::stable_sort(order.begin(), order.end(),
                     [&](ExpertIndex a, ExpertIndex b) { return usage_prob(a) > usage_prob(b); });
    return order;
  }

  friend bool operator==(const ModelRegistry& a, const ModelRegistry& b) {
    return a.name_ == b.name_ && a.archs_ == b.archs_ && a.experts_ == b.experts_ && a.rules_ == b.rules_ &&
           a.mix_ == b.mix_;
  }

 private:
  void index() {
    std::unordered_map<std::string, std::size_t> arch_index;
    for (std::size_t i = 0; i < archs_.size(); ++i)
      if (!arch_index.emplace(archs_[i].id, i).second)
        throw ConfigError("duplicate architecture id '" + archs_[i].id + "'");

    for (std::uint32_t i = 0; i < experts_.size(); ++i) {
      const auto& e = experts_[i];
      if (!expert_index_.emplace(e.expert_id, ExpertIndex{i}).second)
        throw ConfigError("duplicate expert id '" + e.expert_id + "'");
      auto a = arch_index.find(e.arch);
      if (a == arch_index.end())
        throw ConfigError("expert '" + e.expert_id + "' references unknown architecture '" + e.arch + "'");
      expert_arch_.push_back(a->second);
    }
    upstream_.resize(experts_.size());
    for (std::uint32_t i = 0; i < experts_.size(); ++i)
      for (const auto& up : experts_[i].upstream) {
        auto it = expert_index_.find(up);
        if (it == expert_index_.end())
          throw ConfigError("expert '" + experts_[i].expert_id + "' has unknown upstream '" + up + "'");
        upstream_[i].push_back(it->second);
      }

    for (std::uint32_t i = 0; i < rules_.size(); ++i) {
      const auto& r = rules_[i];
      if (!component_index_.emplace(r.component_type, ComponentIndex{i}).second)
        throw ConfigError("duplicate routing rule for component '" + r.component_type + "'");
      rule_cls_.push_back(expert_index(r.classification_expert));
      rule_det_.push_back(r.detection_expert ? std::optional(expert_index(*r.detection_expert)) : std::nullopt);
    }
    weights_.assign(rules_.size(), 0.0);
    for (const auto& [type, freq] : mix_) weights_[to_underlying(component_index(type))] += freq;
  }

  void validate() const {
    for (const auto& e : experts_) {
      if (e.param_bytes == 0) throw ConfigError("expert '" + e.expert_id + "' has zero param_bytes");
      if (!(e.usage_prob >= 0.0 && e.usage_prob <= 1.0))
        throw ConfigError("expert '" + e.expert_id + "' usage_prob outside [0,1]");
    }
    check_acyclic();
    for (const auto& r : rules_) {
      if (!(r.detection_prob >= 0.0 && r.detection_prob <= 1.0))
        throw ConfigError("rule '" + r.component_type + "' detection_prob outside [0,1]");
      if (!r.detection_expert && r.detection_prob != 0.0)
        throw ConfigError("rule '" + r.component_type + "' has detection_prob without a detection expert");
    }
    double total = 0.0;
    for (const auto& [type, freq] : mix_) {
      if (!(freq >= 0.0)) throw ConfigError("component '" + type + "' has negative frequency");
      total += freq;
    }
    if (!mix_.empty() && std::abs(total - 1.0) > 1e-9)
      throw ConfigError("component mix frequencies sum to " + std::to_string(total) + ", expected 1");
  }

  void check_acyclic() const {
    // 0 = unvisited, 1 = on stack, 2 = done
    std::vector<std::uint8_t> state(experts_.size(), 0);
    std::vector<std::pair<std::uint32_t, std::size_t>> stack;
    for (std::uint32_t root = 0; root < experts_.size(); ++root) {
      if (state[root]) continue;
      stack.emplace_back(root, 0);
      state[root] = 1;
      while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < upstream_[node].size()) {
          auto child = to_underlying(upstream_[node][next++]);
          if (state[child] == 1)
            throw ConfigError("dependency cycle through expert '" + experts_[child].expert_id + "'");
          if (state[child] == 0) {
            state[child] = 1;
            stack.emplace_back(child, 0);
          }
        } else {
          state[node] = 2;
          stack.pop_back();
        }
      }
    }
  }

  std::string name_;
  std::vector<ArchClass> archs_;
  std::vector<ExpertSpec> experts_;
  std::vector<RoutingRule> rules_;
  std::vector<std::pair<std::string, double>> mix_;

  std::unordered_map<std::string, ExpertIndex> expert_index_;
  std::unordered_map<std::string, ComponentIndex> component_index_;
  std::vector<std::size_t> expert_arch_;
  std::vector<std::vector<ExpertIndex>> upstream_;
  std::vector<ExpertIndex> rule_cls_;
  std::vector<std::optional<ExpertIndex>> rule_det_;
  std::vector<double> weights_;
};

}  // namespace coe
