// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "coe/engine.hpp"
#include "coe/profiler.hpp"
#include "coe/types.hpp"

namespace coe {

// JSON documents. Every top-level document carries schema_version and kind;
// readers reject unknown fields anywhere so typos fail loudly.

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline void check_keys(const json& j, std::string_view what, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(what) + ": unknown field '" + key + "'");
  }
}

template <typename T>
T get(const json& j, std::string_view what, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string(what) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": field '" + key + "': " + e.what());
  }
}

inline json header(std::string_view kind) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = kind;
  return j;
}

inline void check_header(const json& j, std::string_view kind) {
  if (!j.is_object()) throw ConfigError(std::string(kind) + " document: expected an object");
  const auto version = get<int>(j, kind, "schema_version");
  if (version != kSchemaVersion)
    throw ConfigError(std::string(kind) + " document: unsupported schema_version " + std::to_string(version));
  const auto found = get<std::string>(j, kind, "kind");
  if (found != kind) throw ConfigError("expected a " + std::string(kind) + " document, got '" + found + "'");
}

}  // namespace detail

// ---- registry --------------------------------------------------------------

inline json to_json(const ModelRegistry& r) {
  json j = detail::header("registry");
  j["name"] = r.name();
  j["archs"] = json::array();
  for (const auto& a : r.archs()) j["archs"].push_back({{"id", a.id}, {"kind", to_string(a.kind)}});
  j["experts"] = json::array();
  for (const auto& e : r.experts())
    j["experts"].push_back({{"expert_id", e.expert_id},
                            {"arch", e.arch},
                            {"param_bytes", e.param_bytes},
                            {"upstream", e.upstream},
                            {"usage_prob", e.usage_prob}});
  j["rules"] = json::array();
  for (const auto& rule : r.rules()) {
    json jr = {{"component_type", rule.component_type}, {"classification_expert", rule.classification_expert}};
    if (rule.detection_expert) jr["detection_expert"] = *rule.detection_expert;
    jr["detection_prob"] = rule.detection_prob;
    j["rules"].push_back(jr);
  }
  j["component_mix"] = json::array();
  for (const auto& [type, freq] : r.component_mix())
    j["component_mix"].push_back({{"component_type", type}, {"frequency", freq}});
  return j;
}

inline ModelRegistry registry_from_json(const json& j) {
  using detail::get;
  detail::check_header(j, "registry");
  detail::check_keys(j, "registry", {"schema_version", "kind", "name", "archs", "experts", "rules", "component_mix"});
  std::vector<ArchClass> archs;
  for (const auto& a : get<json>(j, "registry", "archs")) {
    detail::check_keys(a, "arch", {"id", "kind"});
    archs.push_back({get<std::string>(a, "arch", "id"), parse_arch_kind(get<std::string>(a, "arch", "kind"))});
  }
  std::vector<ExpertSpec> experts;
  for (const auto& e : get<json>(j, "registry", "experts")) {
    detail::check_keys(e, "expert", {"expert_id", "arch", "param_bytes", "upstream", "usage_prob"});
    experts.push_back({get<std::string>(e, "expert", "expert_id"), get<std::string>(e, "expert", "arch"),
                       get<Bytes>(e, "expert", "param_bytes"), get<std::vector<std::string>>(e, "expert", "upstream"),
                       get<double>(e, "expert", "usage_prob")});
  }
  std::vector<RoutingRule> rules;
  for (const auto& r : get<json>(j, "registry", "rules")) {
    detail::check_keys(r, "rule", {"component_type", "classification_expert", "detection_expert", "detection_prob"});
    RoutingRule rule;
    rule.component_type = get<std::string>(r, "rule", "component_type");
    rule.classification_expert = get<std::string>(r, "rule", "classification_expert");
    if (r.contains("detection_expert")) rule.detection_expert = get<std::string>(r, "rule", "detection_expert");
    rule.detection_prob = get<double>(r, "rule", "detection_prob");
    rules.push_back(std::move(rule));
  }
  std::vector<std::pair<std::string, double>> mix;
  for (const auto& m : get<json>(j, "registry", "component_mix")) {
    detail::check_keys(m, "component_mix", {"component_type", "frequency"});
    mix.emplace_back(get<std::string>(m, "component_mix", "component_type"),
                     get<double>(m, "component_mix", "frequency"));
  }
  return ModelRegistry(get<std::string>(j, "registry", "name"), std::move(archs), std::move(experts),
                       std::move(rules), std::move(mix));
}

// ---- device ----------------------------------------------------------------

inline json to_json(const DeviceProfile& d) {
  json j = detail::header("device");
  j["name"] = d.name;
  j["architecture"] = to_string(d.architecture);
  j["tiers"] = json::array();
  for (const auto& t : d.tiers)
    j["tiers"].push_back({{"tier", to_string(t.tier)},
                          {"capacity_bytes", t.capacity_bytes},
                          {"read_bandwidth_bytes_per_s", t.read_bandwidth_bytes_per_s},
                          {"fixed_load_overhead_s", t.fixed_load_overhead_s}});
  j["exec_constants"] = json::array();
  for (const auto& [key, c] : d.exec_constants)
    j["exec_constants"].push_back({{"arch", key.first},
                                   {"proc", to_string(key.second)},
                                   {"k_s", c.k_s},
                                   {"b_s", c.b_s},
                                   {"n_sat", c.n_sat},
                                   {"gamma", c.gamma},
                                   {"intermediate_base_bytes", c.intermediate_base_bytes},
                                   {"intermediate_per_item_bytes", c.intermediate_per_item_bytes}});
  return j;
}

inline DeviceProfile device_from_json(const json& j) {
  using detail::get;
  detail::check_header(j, "device");
  detail::check_keys(j, "device", {"schema_version", "kind", "name", "architecture", "tiers", "exec_constants"});
  DeviceProfile d;
  d.name = get<std::string>(j, "device", "name");
  d.architecture = parse_memory_arch(get<std::string>(j, "device", "architecture"));
  for (const auto& t : get<json>(j, "device", "tiers")) {
    detail::check_keys(t, "tier", {"tier", "capacity_bytes", "read_bandwidth_bytes_per_s", "fixed_load_overhead_s"});
    d.tiers.push_back({parse_tier(get<std::string>(t, "tier", "tier")), get<Bytes>(t, "tier", "capacity_bytes"),
                       get<double>(t, "tier", "read_bandwidth_bytes_per_s"),
                       get<double>(t, "tier", "fixed_load_overhead_s")});
  }
  for (const auto& c : get<json>(j, "device", "exec_constants")) {
    detail::check_keys(c, "exec_constants", {"arch", "proc", "k_s", "b_s", "n_sat", "gamma",
                                             "intermediate_base_bytes", "intermediate_per_item_bytes"});
    ExecKey key{get<std::string>(c, "exec_constants", "arch"),
                parse_processor(get<std::string>(c, "exec_constants", "proc"))};
    if (d.exec_constants.count(key)) throw ConfigError("device: duplicate exec constants for " + key.first);
    d.exec_constants[key] = {get<double>(c, "exec_constants", "k_s"),
                             get<double>(c, "exec_constants", "b_s"),
                             get<int>(c, "exec_constants", "n_sat"),
                             get<double>(c, "exec_constants", "gamma"),
                             get<Bytes>(c, "exec_constants", "intermediate_base_bytes"),
                             get<Bytes>(c, "exec_constants", "intermediate_per_item_bytes")};
  }
  d.validate();
  return d;
}

// ---- performance profile -----------------------------------------------------

// One document per (arch, proc) entry.
inline json to_json(const PerfEntry& e, const std::string& device) {
  json j = detail::header("perf_profile");
  j["device"] = device;
  j["arch"] = e.arch;
  j["proc"] = to_string(e.proc);
  j["max_batch"] = e.max_batch;
  j["k_s"] = e.k_s;
  j["b_s"] = e.b_s;
  j["load_latency_by_tier"] = json::object();
  for (const auto& [tier, s] : e.load_latency_by_tier) j["load_latency_by_tier"][std::string(to_string(tier))] = s;
  j["memory_score"] = e.memory_score;
  return j;
}

inline std::pair<std::string, PerfEntry> perf_entry_from_json(const json& j) {
  using detail::get;
  detail::check_header(j, "perf_profile");
  detail::check_keys(j, "perf_profile", {"schema_version", "kind", "device", "arch", "proc", "max_batch", "k_s", "b_s",
                                         "load_latency_by_tier", "memory_score"});
  PerfEntry e;
  e.arch = get<std::string>(j, "perf_profile", "arch");
  e.proc = parse_processor(get<std::string>(j, "perf_profile", "proc"));
  e.max_batch = get<int>(j, "perf_profile", "max_batch");
  e.k_s = get<double>(j, "perf_profile", "k_s");
  e.b_s = get<double>(j, "perf_profile", "b_s");
  const auto tiers = get<json>(j, "perf_profile", "load_latency_by_tier");
  for (const auto& [tier, s] : tiers.items())
    e.load_latency_by_tier[parse_tier(tier)] = s.get<double>();
  e.memory_score = get<double>(j, "perf_profile", "memory_score");
  return {get<std::string>(j, "perf_profile", "device"), std::move(e)};
}

inline std::string perf_file_name(const std::string& arch, Processor proc) {
  return "perf_" + arch + "_" + std::string(to_string(proc)) + ".json";
}

// ---- window search -------------------------------------------------------------

inline json to_json(const WindowSearchResult& r) {
  json j = detail::header("window_search");
  j["lower"] = r.lower;
  j["upper"] = r.upper;
  j["chosen"] = r.chosen;
  j["throughput_samples"] = json::array();
  for (const auto& [n, t] : r.throughput_samples) j["throughput_samples"].push_back({{"experts", n}, {"rps", t}});
  j["windows"] = json::array();
  for (const auto& [lo, hi] : r.windows) j["windows"].push_back({lo, hi});
  j["linear_error"] = r.linear_error;
  j["stopped_on_error"] = r.stopped_on_error;
  j["exhausted"] = r.exhausted;
  j["collapsed"] = r.collapsed;
  return j;
}

inline WindowSearchResult window_search_from_json(const json& j) {
  using detail::get;
  detail::check_header(j, "window_search");
  detail::check_keys(j, "window_search", {"schema_version", "kind", "lower", "upper", "chosen", "throughput_samples",
                                          "windows", "linear_error", "stopped_on_error", "exhausted", "collapsed"});
  WindowSearchResult r;
  r.lower = get<int>(j, "window_search", "lower");
  r.upper = get<int>(j, "window_search", "upper");
  r.chosen = get<int>(j, "window_search", "chosen");
  for (const auto& s : get<json>(j, "window_search", "throughput_samples")) {
    detail::check_keys(s, "throughput_sample", {"experts", "rps"});
    r.throughput_samples.emplace_back(get<int>(s, "throughput_sample", "experts"),
                                      get<double>(s, "throughput_sample", "rps"));
  }
  for (const auto& w : get<json>(j, "window_search", "windows"))
    r.windows.emplace_back(w.at(0).get<int>(), w.at(1).get<int>());
  r.linear_error = get<double>(j, "window_search", "linear_error");
  r.stopped_on_error = get<bool>(j, "window_search", "stopped_on_error");
  r.exhausted = get<bool>(j, "window_search", "exhausted");
  r.collapsed = get<bool>(j, "window_search", "collapsed");
  if (!(r.lower <= r.chosen && r.chosen <= r.upper))
    throw ConfigError("window_search: chosen count outside the window");
  return r;
}

// ---- metrics -------------------------------------------------------------------

inline json to_json(const Metrics& m) {
  json j = detail::header("metrics");
  j["policy"] = to_string(m.policy);
  j["throughput_rps"] = m.throughput_rps;
  j["expert_switches"] = m.expert_switches;
  j["makespan_s"] = m.makespan_s;
  j["external_requests"] = m.external_requests;
  j["completed_requests"] = m.completed_requests;
  j["follow_ups_generated"] = m.follow_ups_generated;
  j["follow_ups_completed"] = m.follow_ups_completed;
  j["stale_predictions"] = m.stale_predictions;
  j["evictions"] = m.evictions;
  j["host_loads"] = m.host_loads;
  j["ssd_loads"] = m.ssd_loads;
  j["mean_service_time_s"] = m.mean_service_time_s;
  j["executors"] = json::array();
  for (const auto& e : m.executors)
    j["executors"].push_back({{"id", e.id},
                              {"proc", to_string(e.proc)},
                              {"busy_s", e.busy_s},
                              {"busy_fraction", e.busy_fraction},
                              {"switches", e.switches},
                              {"batches", e.batches},
                              {"items", e.items}});
  return j;
}

inline Metrics metrics_from_json(const json& j) {
  using detail::get;
  const char* w = "metrics";
  detail::check_header(j, w);
  detail::check_keys(j, w, {"schema_version", "kind", "policy", "throughput_rps", "expert_switches", "makespan_s",
                            "external_requests", "completed_requests", "follow_ups_generated",
                            "follow_ups_completed", "stale_predictions", "evictions", "host_loads", "ssd_loads",
                            "mean_service_time_s", "executors"});
  Metrics m;
  m.policy = parse_policy(get<std::string>(j, w, "policy"));
  m.throughput_rps = get<double>(j, w, "throughput_rps");
  m.expert_switches = get<std::uint64_t>(j, w, "expert_switches");
  m.makespan_s = get<double>(j, w, "makespan_s");
  m.external_requests = get<std::uint64_t>(j, w, "external_requests");
  m.completed_requests = get<std::uint64_t>(j, w, "completed_requests");
  m.follow_ups_generated = get<std::uint64_t>(j, w, "follow_ups_generated");
  m.follow_ups_completed = get<std::uint64_t>(j, w, "follow_ups_completed");
  m.stale_predictions = get<std::uint64_t>(j, w, "stale_predictions");
  m.evictions = get<std::uint64_t>(j, w, "evictions");
  m.host_loads = get<std::uint64_t>(j, w, "host_loads");
  m.ssd_loads = get<std::uint64_t>(j, w, "ssd_loads");
  m.mean_service_time_s = get<double>(j, w, "mean_service_time_s");
  for (const auto& e : get<json>(j, w, "executors")) {
    detail::check_keys(e, "executor", {"id", "proc", "busy_s", "busy_fraction", "switches", "batches", "items"});
    m.executors.push_back({get<ExecutorId>(e, "executor", "id"),
                           parse_processor(get<std::string>(e, "executor", "proc")),
                           get<double>(e, "executor", "busy_s"), get<double>(e, "executor", "busy_fraction"),
                           get<std::uint64_t>(e, "executor", "switches"),
                           get<std::uint64_t>(e, "executor", "batches"),
                           get<std::uint64_t>(e, "executor", "items")});
  }
  return m;
}

// ---- request stream ------------------------------------------------------------

inline json stream_to_json(const ModelRegistry& reg, const std::vector<Request>& stream) {
  json j = detail::header("stream");
  j["registry"] = reg.name();
  j["requests"] = json::array();
  for (const auto& r : stream) {
    json chain = json::array();
    for (auto e : r.chain) chain.push_back(reg.expert(e).expert_id);
    j["requests"].push_back({{"request_id", r.request_id},
                             {"component_type", reg.rule(r.component).component_type},
                             {"arrival_time_s", r.arrival_time_s},
                             {"chain", chain}});
  }
  return j;
}

inline std::vector<Request> stream_from_json(const json& j, const ModelRegistry& reg) {
  using detail::get;
  detail::check_header(j, "stream");
  detail::check_keys(j, "stream", {"schema_version", "kind", "registry", "requests"});
  if (get<std::string>(j, "stream", "registry") != reg.name())
    throw ConfigError("stream was generated for registry '" + get<std::string>(j, "stream", "registry") + "'");
  std::vector<Request> out;
  for (const auto& r : get<json>(j, "stream", "requests")) {
    detail::check_keys(r, "request", {"request_id", "component_type", "arrival_time_s", "chain"});
    Request req;
    req.request_id = get<RequestId>(r, "request", "request_id");
    req.component = reg.component_index(get<std::string>(r, "request", "component_type"));
    req.arrival_time_s = get<double>(r, "request", "arrival_time_s");
    for (const auto& id : get<std::vector<std::string>>(r, "request", "chain")) req.chain.push_back(reg.expert_index(id));
    if (req.chain.empty()) throw ConfigError("request " + std::to_string(req.request_id) + " has an empty chain");
    out.push_back(std::move(req));
  }
  return out;
}

// ---- trace ---------------------------------------------------------------------

inline json to_json(const TraceRecord& t, const ModelRegistry& reg) {
  json j;
  j["time_s"] = t.time_s;
  j["executor"] = t.executor;
  j["event"] = t.event;
  j["expert_id"] = t.expert ? json(reg.expert(*t.expert).expert_id) : json(nullptr);
  j["request_id"] = t.request ? json(*t.request) : json(nullptr);
  return j;
}

inline void write_trace(std::ostream& out, const std::vector<TraceRecord>& trace, const ModelRegistry& reg) {
  for (const auto& t : trace) out << to_json(t, reg).dump() << '\n';
}

// ---- files -----------------------------------------------------------------------

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

}  // namespace coe
