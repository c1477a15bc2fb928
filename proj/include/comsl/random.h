// comsl/random.h

// Copyright 2026  comsl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Draws built directly on mt19937_64 output so streams are identical across
// standard libraries (std::*_distribution is implementation defined).

#ifndef COMSL_RANDOM_H_
#define COMSL_RANDOM_H_

#include <cmath>
#include <cstdint>
#include <random>

namespace comsl {

/// SplitMix64 finalizer; used to derive independent sub-seeds.
inline uint64_t DeriveSeed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform in [0, 1) with 53 random bits.
inline double UniformReal(std::mt19937_64 &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform in {0, ..., n-1}; rejection sampling, no modulo bias.
inline int UniformInt(std::mt19937_64 &rng, int n) {
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v;
  do v = rng();
  while (v >= limit);
  return static_cast<int>(v % un);
}

/// Box-Muller; consumes two draws per sample.
inline double StandardNormal(std::mt19937_64 &rng) {
  const double u1 = 1.0 - UniformReal(rng);  // (0, 1]
  const double u2 = UniformReal(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace comsl

#endif  // COMSL_RANDOM_H_
