// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0
//
// coe-serve: offline profiling, memory search, simulation and comparison of
// expert-serving policies.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coe/coe.hpp"

namespace fs = std::filesystem;
using namespace coe;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitSimulation = 3;

bool is_json_path(const std::string& s) { return s.size() > 5 && s.substr(s.size() - 5) == ".json"; }

DeviceProfile load_device(const std::string& arg) {
  if (is_json_path(arg)) return device_from_json(read_json_file(arg));
  return device_preset(arg);
}

std::shared_ptr<const ModelRegistry> load_registry(const std::string& arg) {
  if (is_json_path(arg)) return std::make_shared<const ModelRegistry>(registry_from_json(read_json_file(arg)));
  return std::make_shared<const ModelRegistry>(generate_registry(board_params(arg)));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory '" + dir + "': " + ec.message());
}

PerfProfile load_perf(const std::string& dir, const DeviceProfile& device, const ModelRegistry& reg) {
  PerfProfile perf(device.name);
  for (const auto& arch : reg.archs())
    for (Processor proc : {Processor::gpu, Processor::cpu}) {
      if (!device.exec_constants.count({arch.id, proc})) continue;
      const auto path = (fs::path(dir) / perf_file_name(arch.id, proc)).string();
      if (!fs::exists(path))
        throw ConfigError("missing performance profile '" + path + "'; run `coe-serve profile --device " +
                          device.name + " --registry <registry> --config-dir " + dir + "` first");
      auto [dev, entry] = perf_entry_from_json(read_json_file(path));
      if (dev != device.name)
        throw ConfigError("'" + path + "' was profiled on device '" + dev + "', not '" + device.name + "'");
      perf.add(std::move(entry));
    }
  return perf;
}

std::string window_file_name(Layout l) {
  return "window_" + std::to_string(l.gpu) + "g" + std::to_string(l.cpu) + "c.json";
}

Layout default_layout(Policy p) {
  if (p == Policy::samba_lru || p == Policy::samba_fifo) return {1, 0};
  return {3, 1};
}

std::string fmt(double x, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << x;
  return os.str();
}

// ---- subcommands -----------------------------------------------------------

struct ProfileArgs {
  std::string device = "numa-3080ti";
  std::string registry = "board-a";
  std::string config_dir = "config";
  double plateau = kDefaultPlateauThreshold;
};

int cmd_profile(const ProfileArgs& a) {
  const auto device = load_device(a.device);
  const auto reg = load_registry(a.registry);
  const auto perf = profile_device(device, *reg, a.plateau);
  ensure_dir(a.config_dir);
  for (const auto& [key, entry] : perf.entries()) {
    const auto path = (fs::path(a.config_dir) / perf_file_name(key.first, key.second)).string();
    write_json_file(path, to_json(entry, device.name));
    std::cout << path << ": max_batch=" << entry.max_batch << " K=" << entry.k_s << " B=" << entry.b_s << '\n';
  }
  return 0;
}

struct SearchArgs {
  std::string device = "numa-3080ti";
  std::string registry = "board-a";
  std::string config_dir = "config";
  int gpus = 3;
  int cpus = 1;
  std::uint64_t seed = 1;
  std::string choose = "random";
  int initial_window = 15;
  double margin = 0.05;
  int sample_requests = kSearchSampleRequests;
  double contention = 1.15;
};

ChooseMode parse_choose(const std::string& s) {
  if (s == "random") return ChooseMode::random;
  if (s == "midpoint") return ChooseMode::midpoint;
  throw ConfigError("--choose must be random or midpoint");
}

int cmd_search(const SearchArgs& a) {
  SimulationInputs in;
  in.device = load_device(a.device);
  in.registry = load_registry(a.registry);
  in.perf = load_perf(a.config_dir, in.device, *in.registry);
  in.contention_factor = a.contention;
  WindowSearchParams params;
  params.initial_window = a.initial_window;
  params.error_margin = a.margin;
  params.choose = parse_choose(a.choose);
  const Layout layout{a.gpus, a.cpus};
  const auto sample = search_sample(*in.registry, a.seed, a.sample_requests);
  const auto result = search_memory_allocation(in, layout, sample, a.seed, params);
  const auto path = (fs::path(a.config_dir) / window_file_name(layout)).string();
  write_json_file(path, to_json(result));
  for (const auto& [n, t] : result.throughput_samples) std::cout << "experts=" << n << " rps=" << fmt(t) << '\n';
  std::cout << "window [" << result.lower << ", " << result.upper << "] chosen " << result.chosen
            << " linear_error " << fmt(result.linear_error, 4) << '\n';
  if (result.collapsed) std::cerr << "warning: window collapsed below one expert before the stop condition\n";
  std::cout << "wrote " << path << '\n';
  return 0;
}

struct SimulateArgs {
  std::string policy = "coserve";
  std::string task = "a1";
  std::string device = "numa-3080ti";
  std::string registry;
  std::string stream;
  std::string config_dir = "config";
  std::string out_dir = "out";
  int gpus = -1;
  int cpus = -1;
  int experts = -1;
  std::uint64_t seed = 1;
  double contention = 1.15;
  bool trace = false;
};

int cmd_simulate(const SimulateArgs& a) {
  const auto policy = parse_policy(a.policy);
  const auto task = task_preset(a.task);
  SimulationInputs in;
  in.device = load_device(a.device);
  in.registry = load_registry(a.registry.empty() ? task.board : a.registry);
  in.perf = load_perf(a.config_dir, in.device, *in.registry);
  in.contention_factor = a.contention;
  Layout layout = default_layout(policy);
  if (a.gpus >= 0) layout.gpu = a.gpus;
  if (a.cpus >= 0) layout.cpu = a.cpus;

  std::optional<int> experts;
  if (a.experts > 0) {
    experts = a.experts;
  } else if (!is_samba(policy) && layout.gpu > 0 &&
             allocation_mode(*in.registry, in.device, in.perf, layout, Processor::gpu) ==
                 AllocationMode::window_search) {
    const auto path = (fs::path(a.config_dir) / window_file_name(layout)).string();
    if (!fs::exists(path))
      throw ConfigError("missing memory allocation '" + path + "'; run `coe-serve search-memory --gpus " +
                        std::to_string(layout.gpu) + " --cpus " + std::to_string(layout.cpu) + " --config-dir " +
                        a.config_dir + "` first, or pass --experts");
    experts = window_search_from_json(read_json_file(path)).chosen;
  }

  std::vector<Request> stream =
      a.stream.empty()
          ? generate_stream(*in.registry, {task.num_requests, 0.004, derive_seed(a.seed, "stream")})
          : stream_from_json(read_json_file(a.stream), *in.registry);
  const auto plan = plan_memory(*in.registry, in.device, in.perf, layout, policy, experts);
  const auto result = run(make_engine_config(in, policy, plan, std::move(stream), a.seed, a.trace));

  ensure_dir(a.out_dir);
  write_json_file((fs::path(a.out_dir) / "metrics.json").string(), to_json(result.metrics));
  if (a.trace) {
    std::ofstream out(fs::path(a.out_dir) / "trace.jsonl");
    write_trace(out, result.trace, *in.registry);
  }
  const auto& m = result.metrics;
  std::cout << to_string(policy) << " " << to_string(layout) << ": throughput " << fmt(m.throughput_rps)
            << " req/s, " << m.expert_switches << " switches, makespan " << fmt(m.makespan_s) << " s\n";
  return 0;
}

struct CompareArgs {
  std::string task = "a1";
  std::string device = "numa-3080ti";
  std::string config_dir;
  int seeds = 5;
  std::uint64_t seed = 1;
  bool ablation = false;
  std::string csv;
  std::string json_out;
  std::string choose = "random";
  double contention = 1.15;
  int workers = 0;
};

int cmd_compare(const CompareArgs& a) {
  if (a.seeds < 1) throw ConfigError("--seeds must be >= 1");
  const auto task = task_preset(a.task);
  SimulationInputs in;
  in.device = load_device(a.device);
  in.registry = load_registry(task.board);
  in.perf = a.config_dir.empty() ? profile_device(in.device, *in.registry)
                                 : load_perf(a.config_dir, in.device, *in.registry);
  in.contention_factor = a.contention;

  CompareOptions opt;
  opt.num_requests = task.num_requests;
  opt.seeds.clear();
  for (int i = 0; i < a.seeds; ++i) opt.seeds.push_back(a.seed + static_cast<std::uint64_t>(i));
  opt.ablation = a.ablation;
  opt.search.choose = parse_choose(a.choose);
  if (a.workers > 0) opt.workers = static_cast<unsigned>(a.workers);
  const auto cmp = compare(in, opt);

  std::ostringstream csv;
  csv << "policy,layout,throughput_mean,throughput_stdev,switches_mean,switches_stdev,ratio_vs_samba_lru,"
         "switch_reduction_vs_samba_lru,mean_service_time_s,scheduling_wall_per_request_s\n";
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["kind"] = "comparison";
  doc["task"] = a.task;
  doc["device"] = in.device.name;
  doc["seeds"] = opt.seeds;
  doc["best_layout"] = to_string(cmp.best_layout);
  doc["rows"] = json::array();
  doc["layout_sweep"] = json::array();
  auto emit = [&](const PolicyRow& r, json& into) {
    csv << to_string(r.policy) << ',' << to_string(r.layout) << ',' << r.throughput.mean << ',' << r.throughput.stdev
        << ',' << r.switches.mean << ',' << r.switches.stdev << ',' << r.ratio_vs_samba_lru << ','
        << r.switch_reduction_vs_samba_lru << ',' << r.mean_service_time_s << ',' << r.scheduling_wall_per_request_s
        << '\n';
    into.push_back({{"policy", to_string(r.policy)},
                    {"layout", to_string(r.layout)},
                    {"throughput_mean", r.throughput.mean},
                    {"throughput_stdev", r.throughput.stdev},
                    {"switches_mean", r.switches.mean},
                    {"switches_stdev", r.switches.stdev},
                    {"ratio_vs_samba_lru", r.ratio_vs_samba_lru},
                    {"switch_reduction_vs_samba_lru", r.switch_reduction_vs_samba_lru},
                    {"mean_service_time_s", r.mean_service_time_s},
                    {"scheduling_wall_per_request_s", r.scheduling_wall_per_request_s}});
  };
  for (const auto& r : cmp.rows) emit(r, doc["rows"]);
  for (const auto& r : cmp.layout_sweep) emit(r, doc["layout_sweep"]);

  std::cout << "task " << a.task << " on " << in.device.name << ", " << a.seeds << " seeds, best CoServe layout "
            << to_string(cmp.best_layout) << "\n\n";
  std::cout << std::left << std::setw(16) << "policy" << std::setw(8) << "layout" << std::setw(20) << "throughput"
            << std::setw(20) << "switches" << std::setw(10) << "ratio" << "switch cut\n";
  for (const auto& r : cmp.rows)
    std::cout << std::setw(16) << to_string(r.policy) << std::setw(8) << to_string(r.layout) << std::setw(20)
              << (fmt(r.throughput.mean, 2) + " +- " + fmt(r.throughput.stdev, 2)) << std::setw(20)
              << (fmt(r.switches.mean, 1) + " +- " + fmt(r.switches.stdev, 1)) << std::setw(10)
              << (fmt(r.ratio_vs_samba_lru, 2) + "x") << fmt(100.0 * r.switch_reduction_vs_samba_lru, 1) << "%\n";
  const auto& best = cmp.rows.front();
  std::cout << "\nscheduling overhead: " << fmt(best.scheduling_wall_per_request_s * 1e6, 2)
            << " us/request wall clock vs " << fmt(best.mean_service_time_s * 1e3, 2)
            << " ms simulated service per invocation ("
            << fmt(100.0 * best.scheduling_wall_per_request_s / best.mean_service_time_s, 4) << "%)\n";
  std::cout << "all baselines batch with the same splitter (FCFS order, no arranging)\n";

  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw ConfigError("cannot write '" + a.csv + "'");
    out << csv.str();
  }
  if (!a.json_out.empty()) write_json_file(a.json_out, doc);
  return 0;
}

struct GenRegistryArgs {
  std::string board;
  RegistryParams params;
  std::string out = "registry.json";
};

int cmd_generate_registry(GenRegistryArgs a) {
  RegistryParams p = a.params;
  if (!a.board.empty()) {
    const auto preset = board_params(a.board);
    p.name = preset.name;
    p.num_components = preset.num_components;
    p.seed = preset.seed;
  }
  write_json_file(a.out, to_json(generate_registry(p)));
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

struct GenStreamArgs {
  std::string registry = "board-a";
  std::string task;
  int requests = 2500;
  double interarrival = 0.004;
  std::uint64_t seed = 1;
  std::string out = "stream.json";
};

int cmd_generate_stream(const GenStreamArgs& a) {
  int n = a.requests;
  std::string registry = a.registry;
  if (!a.task.empty()) {
    const auto t = task_preset(a.task);
    n = t.num_requests;
    registry = t.board;
  }
  const auto reg = load_registry(registry);
  write_json_file(a.out, stream_to_json(*reg, generate_stream(*reg, {n, a.interarrival, derive_seed(a.seed, "stream")})));
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coe-serve: dependency-aware serving of collaboration-of-experts models (simulated)"};
  app.require_subcommand(1);

  ProfileArgs pa;
  auto* profile = app.add_subcommand("profile", "profile every (architecture, processor) pair of a device");
  profile->add_option("--device", pa.device, "device preset or JSON file")->capture_default_str();
  profile->add_option("--registry", pa.registry, "board preset or registry JSON")->capture_default_str();
  profile->add_option("--config-dir", pa.config_dir, "where profiles are written")->capture_default_str();
  profile->add_option("--plateau", pa.plateau, "relative average-latency gain that ends batching")->capture_default_str();

  SearchArgs sa;
  auto* search = app.add_subcommand("search-memory", "decay-window search for the GPU resident-expert count");
  search->add_option("--device", sa.device)->capture_default_str();
  search->add_option("--registry", sa.registry)->capture_default_str();
  search->add_option("--config-dir", sa.config_dir)->capture_default_str();
  search->add_option("--gpus", sa.gpus, "GPU executors")->capture_default_str();
  search->add_option("--cpus", sa.cpus, "CPU executors")->capture_default_str();
  search->add_option("--seed", sa.seed)->capture_default_str();
  search->add_option("--choose", sa.choose, "random or midpoint")->capture_default_str();
  search->add_option("--initial-window", sa.initial_window)->capture_default_str();
  search->add_option("--margin", sa.margin, "linear error margin")->capture_default_str();
  search->add_option("--sample-requests", sa.sample_requests)->capture_default_str();
  search->add_option("--contention", sa.contention)->capture_default_str();

  SimulateArgs ma;
  auto* simulate = app.add_subcommand("simulate", "run one policy on a task and write metrics");
  simulate->add_option("--policy", ma.policy)->capture_default_str();
  simulate->add_option("--task", ma.task, "a1, a2, b1 or b2")->capture_default_str();
  simulate->add_option("--device", ma.device)->capture_default_str();
  simulate->add_option("--registry", ma.registry, "override the task's board");
  simulate->add_option("--stream", ma.stream, "request stream JSON instead of the task stream");
  simulate->add_option("--config-dir", ma.config_dir)->capture_default_str();
  simulate->add_option("--out", ma.out_dir)->capture_default_str();
  simulate->add_option("--gpus", ma.gpus, "GPU executors (default depends on policy)");
  simulate->add_option("--cpus", ma.cpus, "CPU executors (default depends on policy)");
  simulate->add_option("--experts", ma.experts, "GPU resident-expert count, skipping the search result");
  simulate->add_option("--seed", ma.seed)->capture_default_str();
  simulate->add_option("--contention", ma.contention)->capture_default_str();
  simulate->add_flag("--trace", ma.trace, "also write trace.jsonl");

  CompareArgs ca;
  auto* comp = app.add_subcommand("compare", "CoServe against the baselines over several seeds");
  comp->add_option("--task", ca.task)->capture_default_str();
  comp->add_option("--device", ca.device)->capture_default_str();
  comp->add_option("--config-dir", ca.config_dir, "use profiles from here instead of profiling in memory");
  comp->add_option("--seeds", ca.seeds)->capture_default_str();
  comp->add_option("--seed", ca.seed, "first seed")->capture_default_str();
  comp->add_flag("--ablation", ca.ablation, "add the partial CoServe variants");
  comp->add_option("--csv", ca.csv);
  comp->add_option("--json", ca.json_out);
  comp->add_option("--choose", ca.choose)->capture_default_str();
  comp->add_option("--contention", ca.contention)->capture_default_str();
  comp->add_option("--workers", ca.workers, "parallel runs (default: hardware threads)");

  GenRegistryArgs ga;
  auto* genreg = app.add_subcommand("generate-registry", "write a registry JSON");
  genreg->add_option("--board", ga.board, "board-a or board-b");
  genreg->add_option("--name", ga.params.name)->capture_default_str();
  genreg->add_option("--components", ga.params.num_components)->capture_default_str();
  genreg->add_option("--detection-experts", ga.params.num_detection_experts)->capture_default_str();
  genreg->add_option("--coverage", ga.params.detection_coverage)->capture_default_str();
  genreg->add_option("--zipf", ga.params.zipf_s)->capture_default_str();
  genreg->add_option("--size-jitter", ga.params.size_jitter)->capture_default_str();
  genreg->add_option("--seed", ga.params.seed)->capture_default_str();
  genreg->add_option("--out", ga.out)->capture_default_str();

  GenStreamArgs gs;
  auto* genstream = app.add_subcommand("generate-stream", "write a request stream JSON");
  genstream->add_option("--registry", gs.registry)->capture_default_str();
  genstream->add_option("--task", gs.task, "use a task preset's board and size");
  genstream->add_option("--requests", gs.requests)->capture_default_str();
  genstream->add_option("--interarrival", gs.interarrival)->capture_default_str();
  genstream->add_option("--seed", gs.seed)->capture_default_str();
  genstream->add_option("--out", gs.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*profile) return cmd_profile(pa);
    if (*search) return cmd_search(sa);
    if (*simulate) return cmd_simulate(ma);
    if (*comp) return cmd_compare(ca);
    if (*genreg) return cmd_generate_registry(ga);
    if (*genstream) return cmd_generate_stream(gs);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const MemoryStarvation& e) {
    std::cerr << "simulation failed: memory starvation: " << e.what() << '\n';
    return kExitSimulation;
  } catch (const std::exception& e) {
    std::cerr << "simulation failed: " << e.what() << '\n';
    return kExitSimulation;
  }
  return 0;
}
