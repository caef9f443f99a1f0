// Copyright (c) coe-serving authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace coe {

// Seed splitting. Every random stream in a run is derived from one root seed
// and a label, so adding a consumer never shifts the draws of another:
//
//   derive_seed(root, label) = splitmix64(root ^ fnv1a64(label))
//
// Labels in use: "registry", "stream", "branch", "search", "choose".

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  return splitmix64(root ^ fnv1a64(label));
}

// Uniform in [0, 1) from a (seed, key) pair; order-independent.
constexpr double hash_unit(std::uint64_t seed, std::uint64_t key) {
  return static_cast<double>(splitmix64(seed ^ splitmix64(key)) >> 11) * 0x1.0p-53;
}

}  // namespace coe
