// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "coe/types.hpp"

namespace coe {

// Built-in device profiles. The same data ships as JSON under data/devices/.
//
// numa-3080ti: 12 GB GPU, 16 GB host DRAM, SATA SSD at 530 MB/s.
// uma-m2:      24 GB unified memory, NVMe SSD at ~3000 MB/s. The host entry is
//              a zero-capacity transfer path standing for framework-side data
//              reorganisation when handing unified memory to the GPU.
//
// Execution constants are desk-scale stand-ins with the measured shape:
// batch latency linear up to n_sat, then each extra item costs gamma*K.

inline DeviceProfile numa_3080ti() {
  DeviceProfile d;
  d.name = "numa-3080ti";
  d.architecture = MemoryArch::numa;
  d.tiers = {
      {Tier::device, gigabytes(12), 400e9, 0.0},
      {Tier::host, gigabytes(16), 12e9, 0.005},
      {Tier::ssd, 0, 530e6, 0.01},
  };
  d.exec_constants = {
      {{"resnet101", Processor::gpu}, {0.004, 0.020, 8, 2.0, megabytes(100), megabytes(300)}},
      {{"resnet101", Processor::cpu}, {0.030, 0.030, 4, 1.5, megabytes(50), megabytes(40)}},
      {{"yolov5m", Processor::gpu}, {0.006, 0.030, 6, 2.2, megabytes(150), megabytes(350)}},
      {{"yolov5m", Processor::cpu}, {0.050, 0.040, 4, 1.5, megabytes(60), megabytes(60)}},
      {{"yolov5l", Processor::gpu}, {0.009, 0.040, 6, 2.0, megabytes(200), megabytes(450)}},
      {{"yolov5l", Processor::cpu}, {0.080, 0.050, 3, 1.5, megabytes(80), megabytes(90)}},
  };
  return d;
}

inline DeviceProfile uma_m2() {
  DeviceProfile d;
  d.name = "uma-m2";
  d.architecture = MemoryArch::uma;
  d.tiers = {
      {Tier::device, gigabytes(24), 100e9, 0.0},
      {Tier::host, 0, 8.5e9, 0.001},
      {Tier::ssd, 0, 3000e6, 0.005},
  };
  d.exec_constants = {
      {{"resnet101", Processor::gpu}, {0.006, 0.012, 6, 1.8, megabytes(100), megabytes(250)}},
      {{"resnet101", Processor::cpu}, {0.040, 0.030, 5, 1.4, megabytes(80), megabytes(150)}},
      {{"yolov5m", Processor::gpu}, {0.009, 0.018, 6, 1.8, megabytes(140), megabytes(300)}},
      {{"yolov5m", Processor::cpu}, {0.060, 0.040, 4, 1.4, megabytes(90), megabytes(160)}},
      {{"yolov5l", Processor::gpu}, {0.013, 0.025, 5, 1.8, megabytes(180), megabytes(380)}},
      {{"yolov5l", Processor::cpu}, {0.090, 0.050, 4, 1.4, megabytes(110), megabytes(200)}},
  };
  return d;
}

inline std::vector<std::string> device_preset_names() { return {"numa-3080ti", "uma-m2"}; }

inline DeviceProfile device_preset(const std::string& name) {
  if (name == "numa-3080ti") return numa_3080ti();
  if (name == "uma-m2") return uma_m2();
  throw ConfigError("unknown device preset '" + name + "' (expected numa-3080ti or uma-m2)");
}

}  // namespace coe
