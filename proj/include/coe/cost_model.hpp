// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "coe/types.hpp"

namespace coe {

// Analytic device model. It stands in for real hardware for both the offline
// profiler and the simulator; every function is pure.

struct LoadPath {
  Tier source = Tier::ssd;
  Processor destination = Processor::gpu;
  Bytes bytes = 0;
};

// Batch latency from raw constants. `k_scale` multiplies K and models
// contention between executors sharing one processor.
inline double exec_latency(const ExecConstants& c, int n, double k_scale = 1.0) {
  if (n < 1) throw ConfigError("exec_latency needs a batch of at least one item");
  const double k = c.k_s * k_scale;
  if (n <= c.n_sat) return k * n + c.b_s;
  return k * c.n_sat + c.b_s + c.gamma * k * (n - c.n_sat);
}

inline double exec_latency(const DeviceProfile& device, const std::string& arch, Processor proc, int n,
                           double k_scale = 1.0) {
  return exec_latency(device.constants(arch, proc), n, k_scale);
}

inline double load_latency(const LoadPath& path, const DeviceProfile& device) {
  if (path.bytes == 0) throw ConfigError("load of zero bytes");
  const auto& tier = device.tier(path.source);
  return static_cast<double>(path.bytes) / tier.read_bandwidth_bytes_per_s + tier.fixed_load_overhead_s;
}

inline Bytes inference_memory(const ExecConstants& c, int n) {
  if (n < 0) throw ConfigError("inference_memory needs n >= 0");
  if (n == 0) return 0;
  return c.intermediate_base_bytes + static_cast<Bytes>(n) * c.intermediate_per_item_bytes;
}

inline Bytes inference_memory(const DeviceProfile& device, const std::string& arch, Processor proc, int n) {
  return inference_memory(device.constants(arch, proc), n);
}

// Largest n with inference_memory(n) <= budget, 0 when not even one item fits.
// Capped at `limit` so a zero per-item cost cannot run away.
inline int memory_feasible_batch(const ExecConstants& c, Bytes budget, int limit = 1 << 20) {
  if (budget < c.intermediate_base_bytes + c.intermediate_per_item_bytes) return 0;
  if (c.intermediate_per_item_bytes == 0) return limit;
  const Bytes n = (budget - c.intermediate_base_bytes) / c.intermediate_per_item_bytes;
  return n > static_cast<Bytes>(limit) ? limit : static_cast<int>(n);
}

// K multiplier for `colocated` executors sharing one processor:
// factor^(colocated - 1).
inline double contention_scale(double factor, int colocated) {
  if (colocated <= 1) return 1.0;
  return std::pow(factor, colocated - 1);
}

}  // namespace coe
