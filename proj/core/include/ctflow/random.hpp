// Copyright 2026 The ctflow Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "ctflow/tensor.hpp"

namespace ctflow {

// Philox4x32-10 block function (Salmon et al., SC'11). Pure: the same
// (counter, key) always yields the same four words.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

// Counter-based random stream. Block i of stream (seed, stream_id) is
// philox(counter = [i lo, i hi, stream_id lo, stream_id hi], key = seed), so
// the output is a pure function of (seed, stream_id, counter) and distinct
// stream ids never share a block.
//
// Each block yields two 53-bit uniforms in (0, 1), or two standard normals via
// Box-Muller. Every draw call starts on a fresh block and consumes
// ceil(n / 2) blocks; an odd trailing variate is discarded.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  std::array<std::uint32_t, 4> next_block();

  // Two uniforms in (0, 1) from one block.
  std::array<double, 2> next_uniform_pair();
  std::array<double, 2> next_gaussian_pair();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_;
};

// n i.i.d. N(0, 1) variates. Advances the stream by ceil(n / 2) blocks.
std::vector<double> draw_gaussian(RandomStream& stream, Index n);
// rows x cols tensor of N(0, 1) variates, filled row-major; one draw_gaussian call.
Tensor draw_gaussian(RandomStream& stream, Index rows, Index cols);
// n i.i.d. U(0, 1) variates. Advances the stream by ceil(n / 2) blocks.
std::vector<double> draw_uniform(RandomStream& stream, Index n);

// Stream id derived from a path of integers (purpose tag, round, particle, ...)
// by SplitMix64 chaining. Used to give every consumer its own stream.
std::uint64_t derive_stream_id(std::initializer_list<std::uint64_t> path);

inline RandomStream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return RandomStream(seed, derive_stream_id(path));
}

// Purpose tags for derive_stream_id paths.
namespace stream_tag {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kFlow = 2;
inline constexpr std::uint64_t kGenerator = 3;
inline constexpr std::uint64_t kStudent = 4;
inline constexpr std::uint64_t kCritic = 5;
inline constexpr std::uint64_t kData = 6;
inline constexpr std::uint64_t kEstimator = 7;
inline constexpr std::uint64_t kReference = 8;
inline constexpr std::uint64_t kParams = 9;
}  // namespace stream_tag

}  // namespace ctflow
