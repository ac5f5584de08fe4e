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
#include "ctflow/random.hpp"

#include <cmath>
#include <numbers>

#include "ctflow/errors.hpp"

namespace ctflow {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_open_unit(std::uint64_t bits) {
  // 53 random bits, shifted by half an ulp so 0 and 1 are excluded.
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

std::array<std::uint32_t, 4> RandomStream::next_block() {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
      static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                            static_cast<std::uint32_t>(seed_ >> 32)};
  ++counter_;
  return philox4x32_10(ctr, key);
}

std::array<double, 2> RandomStream::next_uniform_pair() {
  const auto b = next_block();
  const std::uint64_t u0 = static_cast<std::uint64_t>(b[0]) | (static_cast<std::uint64_t>(b[1]) << 32);
  const std::uint64_t u1 = static_cast<std::uint64_t>(b[2]) | (static_cast<std::uint64_t>(b[3]) << 32);
  return {to_open_unit(u0), to_open_unit(u1)};
}

std::array<double, 2> RandomStream::next_gaussian_pair() {
  const auto [u0, u1] = next_uniform_pair();
  const double r = std::sqrt(-2.0 * std::log(u0));
  const double theta = 2.0 * std::numbers::pi * u1;
  return {r * std::cos(theta), r * std::sin(theta)};
}

std::vector<double> draw_gaussian(RandomStream& stream, Index n) {
  if (n < 0) throw ContractError("draw_gaussian: negative count");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; i += 2) {
    const auto pair = stream.next_gaussian_pair();
    out[static_cast<std::size_t>(i)] = pair[0];
    if (i + 1 < n) out[static_cast<std::size_t>(i + 1)] = pair[1];
  }
  return out;
}

Tensor draw_gaussian(RandomStream& stream, Index rows, Index cols) {
  return Tensor(rows, cols, draw_gaussian(stream, rows * cols));
}

std::vector<double> draw_uniform(RandomStream& stream, Index n) {
  if (n < 0) throw ContractError("draw_uniform: negative count");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; i += 2) {
    const auto pair = stream.next_uniform_pair();
    out[static_cast<std::size_t>(i)] = pair[0];
    if (i + 1 < n) out[static_cast<std::size_t>(i + 1)] = pair[1];
  }
  return out;
}

std::uint64_t derive_stream_id(std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = 0x6A09E667F3BCC908ull;
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p));
  return h;
}

}  // namespace ctflow
