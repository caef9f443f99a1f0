// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "coe/cost_model.hpp"
#include "coe/types.hpp"

namespace coe {

// Offline profiling: microbenchmarks against the device model, and the
// decay-window search over how many experts to keep resident.

struct PerfEntry {
  std::string arch;
  Processor proc = Processor::gpu;
  int max_batch = 1;
  double k_s = 0.0;
  double b_s = 0.0;
  std::map<Tier, double> load_latency_by_tier;
  double memory_score = 1.0;

  friend bool operator==(const PerfEntry&, const PerfEntry&) = default;

  double load_latency(Tier t) const {
    auto it = load_latency_by_tier.find(t);
    if (it == load_latency_by_tier.end())
      throw ConfigError("profile (" + arch + ", " + std::string(to_string(proc)) + ") has no load latency from " +
                        std::string(to_string(t)));
    return it->second;
  }
};

class PerfProfile {
 public:
  PerfProfile() = default;
  explicit PerfProfile(std::string device) : device_(std::move(device)) {}

  const std::string& device() const { return device_; }
  const std::map<ExecKey, PerfEntry>& entries() const { return entries_; }

  void add(PerfEntry e) {
    if (e.max_batch < 1) throw ConfigError("profile max_batch must be >= 1");
    if (!(e.k_s > 0.0)) throw ConfigError("profile K must be > 0");
    ExecKey key{e.arch, e.proc};
    entries_[key] = std::move(e);
  }

  bool contains(const std::string& arch, Processor proc) const { return entries_.count({arch, proc}) != 0; }

  const PerfEntry& at(const std::string& arch, Processor proc) const {
    auto it = entries_.find({arch, proc});
    if (it == entries_.end())
      throw ConfigError("no performance profile for (" + arch + ", " + std::string(to_string(proc)) +
                        "); run `coe-serve profile` first");
    return it->second;
  }

  friend bool operator==(const PerfProfile&, const PerfProfile&) = default;

 private:
  std::string device_;
  std::map<ExecKey, PerfEntry> entries_;
};

inline constexpr double kDefaultPlateauThreshold = 0.02;

// Smallest n whose next step improves average latency by less than
// `threshold` (relative), capped by the largest batch that fits `memory`.
inline int profile_max_batch(const ExecConstants& c, Bytes memory, double threshold = kDefaultPlateauThreshold) {
  const int memory_cap = std::max(1, memory_feasible_batch(c, memory, 1 << 16));
  for (int n = 1; n < memory_cap; ++n) {
    const double avg = exec_latency(c, n) / n;
    const double next = exec_latency(c, n + 1) / (n + 1);
    if ((avg - next) / avg < threshold) return n;
  }
  return memory_cap;
}

inline int profile_max_batch(const std::string& arch, Processor proc, const DeviceProfile& device,
                             double threshold = kDefaultPlateauThreshold) {
  return profile_max_batch(device.constants(arch, proc), device.processor_memory(proc), threshold);
}

struct LinearFit {
  double k_s = 0.0;
  double b_s = 0.0;
};

// Ordinary least squares of latency against batch size.
inline LinearFit fit_linear_latency(const std::vector<std::pair<int, double>>& samples) {
  if (samples.size() < 2) throw ConfigError("linear latency fit needs at least two samples");
  double mx = 0.0, my = 0.0;
  for (const auto& [n, y] : samples) {
    mx += n;
    my += y;
  }
  mx /= static_cast<double>(samples.size());
  my /= static_cast<double>(samples.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [n, y] : samples) {
    sxx += (n - mx) * (n - mx);
    sxy += (n - mx) * (y - my);
  }
  if (sxx == 0.0) throw ConfigError("linear latency fit needs two distinct batch sizes");
  const double k = sxy / sxx;
  return {k, my - k * mx};
}

// Leading samples whose marginal cost matches the first step; saturated
// batches past the knee would bend the fitted line.
inline std::vector<std::pair<int, double>> linear_region(const std::vector<std::pair<int, double>>& samples,
                                                         double rel_tol = 1e-9) {
  if (samples.size() <= 2) return samples;
  const double step = samples[1].second - samples[0].second;
  std::size_t end = 2;
  while (end < samples.size()) {
    const double d = samples[end].second - samples[end - 1].second;
    if (std::abs(d - step) > rel_tol * std::abs(step)) break;
    ++end;
  }
  return {samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(end)};
}

// Microbenchmark n = 1..max(max_batch, 2) and fit K and B on the linear region.
inline LinearFit fit_linear_latency(const std::string& arch, Processor proc, const DeviceProfile& device,
                                    int max_batch) {
  const auto& c = device.constants(arch, proc);
  std::vector<std::pair<int, double>> samples;
  for (int n = 1; n <= std::max(max_batch, 2); ++n) samples.emplace_back(n, exec_latency(c, n));
  return fit_linear_latency(linear_region(samples));
}

// Profiles every (architecture, processor) pair the registry uses and the
// device knows. Deterministic: the same inputs give identical profiles.
inline PerfProfile profile_device(const DeviceProfile& device, const ModelRegistry& registry,
                                  double threshold = kDefaultPlateauThreshold) {
  device.validate();
  std::map<std::string, double> mean_bytes;
  std::map<std::string, int> count;
  for (const auto& e : registry.experts()) {
    mean_bytes[e.arch] += static_cast<double>(e.param_bytes);
    count[e.arch] += 1;
  }
  double largest = 0.0;
  for (auto& [arch, b] : mean_bytes) {
    b /= count[arch];
    largest = std::max(largest, b);
  }

  PerfProfile profile(device.name);
  for (const auto& arch : registry.archs()) {
    if (!mean_bytes.count(arch.id)) continue;
    const auto bytes = static_cast<Bytes>(std::llround(mean_bytes[arch.id]));
    for (Processor proc : {Processor::gpu, Processor::cpu}) {
      if (!device.exec_constants.count({arch.id, proc})) continue;
      PerfEntry e;
      e.arch = arch.id;
      e.proc = proc;
      e.max_batch = profile_max_batch(arch.id, proc, device, threshold);
      const auto fit = fit_linear_latency(arch.id, proc, device, e.max_batch);
      e.k_s = fit.k_s;
      e.b_s = fit.b_s;
      for (const auto& tier : device.tiers)
        if (tier.tier != Tier::device)
          e.load_latency_by_tier[tier.tier] = load_latency({tier.tier, proc, bytes}, device);
      e.memory_score = largest > 0.0 ? mean_bytes[arch.id] / largest : 1.0;
      profile.add(std::move(e));
    }
  }
  return profile;
}

enum class AllocationMode : std::uint8_t { max_batch_reserve, window_search };

inline std::string_view to_string(AllocationMode m) {
  return m == AllocationMode::max_batch_reserve ? "max_batch_reserve" : "window_search";
}

inline constexpr double kDefaultReserveThreshold = 0.15;

// Processors whose max-batch working set is small relative to their memory
// simply reserve it; the rest need the window search.
inline AllocationMode decide_allocation_mode(const ExecConstants& c, int max_batch, Bytes executor_memory,
                                             double threshold = kDefaultReserveThreshold) {
  const double needed = static_cast<double>(inference_memory(c, max_batch));
  return needed <= threshold * static_cast<double>(executor_memory) ? AllocationMode::max_batch_reserve
                                                                    : AllocationMode::window_search;
}

inline AllocationMode decide_allocation_mode(const std::string& arch, Processor proc, const DeviceProfile& device,
                                             const PerfProfile& perf, Bytes executor_memory,
                                             double threshold = kDefaultReserveThreshold) {
  return decide_allocation_mode(device.constants(arch, proc), perf.at(arch, proc).max_batch, executor_memory,
                                threshold);
}

// ---------------------------------------------------------------------------
// Decay-window search
//
// The window starts at [0, w0] over the experts sorted by descending usage.
// Each slide moves the lower bound to the previous upper bound and shrinks the
// size by decay = 1 - w0/100 (real-valued, rounded up, and forced to shrink by
// at least one). Throughput is sampled at every upper bound. A line fitted to
// the first `fit_points` samples predicts later ones; the search stops at the
// first window whose sample falls short of the line by more than the margin.

enum class ChooseMode : std::uint8_t { random, midpoint };

struct WindowSearchParams {
  int initial_window = 15;
  double error_margin = 0.05;
  int fit_points = 3;
  ChooseMode choose = ChooseMode::random;
  std::uint64_t seed = 1;
};

struct WindowSearchResult {
  int lower = 0;
  int upper = 0;
  int chosen = 0;
  std::vector<std::pair<int, double>> throughput_samples;
  std::vector<std::pair<int, int>> windows;
  double linear_error = 0.0;  // relative shortfall at the stopping sample
  bool stopped_on_error = false;
  bool exhausted = false;  // reached the total expert count
  bool collapsed = false;  // window shrank below one expert first (warning)

  friend bool operator==(const WindowSearchResult&, const WindowSearchResult&) = default;
};

inline double decay_factor(int initial_window) { return 1.0 - initial_window / 100.0; }

inline int choose_in_window(int lower, int upper, ChooseMode mode, std::uint64_t seed) {
  const int lo = std::max(lower, 1);
  const int hi = std::max(upper, lo);
  if (mode == ChooseMode::midpoint) return lo + (hi - lo) / 2;
  std::mt19937_64 rng(seed);
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// `throughput(count)` runs the sample workload with `count` experts resident.
inline WindowSearchResult search_window(int total_experts, const std::function<double(int)>& throughput,
                                        const WindowSearchParams& p = {}) {
  if (total_experts < 1) throw ConfigError("window search needs at least one expert");
  if (p.initial_window < 1 || p.initial_window >= 100) throw ConfigError("initial window must lie in [1, 99]");
  if (p.fit_points < 2) throw ConfigError("window search needs at least two fit points");

  const double decay = decay_factor(p.initial_window);
  WindowSearchResult r;
  double real_size = p.initial_window;
  int size = p.initial_window;
  int lower = 0;
  int upper = std::min(size, total_experts);
  LinearFit line;

  while (true) {
    const double t = throughput(upper);
    r.throughput_samples.emplace_back(upper, t);
    r.windows.emplace_back(lower, upper);
    r.lower = lower;
    r.upper = upper;

    const auto n = static_cast<int>(r.throughput_samples.size());
    if (n == p.fit_points) {
      line = fit_linear_latency({r.throughput_samples.begin(), r.throughput_samples.end()});
    } else if (n > p.fit_points) {
      const double predicted = line.k_s * upper + line.b_s;
      const double err = predicted > 0.0 ? (predicted - t) / predicted : 1.0;
      if (err > p.error_margin) {
        r.linear_error = err;
        r.stopped_on_error = true;
        break;
      }
    }
    if (upper >= total_experts) {
      r.exhausted = true;
      break;
    }
    real_size *= decay;
    const int next = std::min(size - 1, static_cast<int>(std::ceil(real_size - 1e-9)));
    if (next < 1) {
      r.collapsed = true;
      break;
    }
    size = next;
    lower = upper;
    upper = std::min(lower + size, total_experts);
  }
  r.chosen = choose_in_window(r.lower, r.upper, p.choose, p.seed);
  return r;
}

}  // namespace coe
