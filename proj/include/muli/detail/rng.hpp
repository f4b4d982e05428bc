/*
 * Copyright 2026 The muli Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace muli::detail {

// std::shuffle and the std distributions are implementation-defined, so seeded
// reproducibility (split assignment, epoch order, subsampling) goes through these
// helpers instead. Modulo reduction bias is ~2^-64 per draw at our range sizes.

inline std::uint64_t bounded_draw(std::mt19937_64& gen, std::uint64_t bound) {
  return bound == 0 ? 0 : gen() % bound;
}

template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& gen) {
  if (v.size() < 2) return;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    std::size_t j = static_cast<std::size_t>(bounded_draw(gen, i + 1));
    std::swap(v[i], v[j]);
  }
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace muli::detail
