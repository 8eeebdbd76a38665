// Copyright 2026 The dpfl-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPFL_COMMON_RNG_H_
#define DPFL_COMMON_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace dpfl {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent seeds from structured keys.
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

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
  return splitmix64(seed ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

// Named substream of a root seed: changing one stream's consumer never shifts
// the draws of another.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return mix_seed(seed, fnv1a64(stream));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                    std::uint64_t index) {
  return mix_seed(derive_seed(seed, stream), index);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace dpfl

#endif  // DPFL_COMMON_RNG_H_
