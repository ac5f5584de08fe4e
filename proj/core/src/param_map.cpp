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
#include "ctflow/param_map.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ctflow/errors.hpp"

namespace ctflow {
namespace {

constexpr std::string_view kMagic = "CTFPARAM";
constexpr std::uint32_t kEndianTag = 0x01020304u;

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ConfigError("param file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Index shape_count(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ContractError("negative parameter dimension");
    n *= d;
  }
  return n;
}

Index ParamEntry::count() const { return shape_count(shape); }

Tensor ParamEntry::as_tensor() const {
  switch (shape.size()) {
    case 0:
      return Tensor(1, 1, values);
    case 1:
      return Tensor(1, shape[0], values);
    case 2:
      return Tensor(shape[0], shape[1], values);
    default:
      throw SignatureError("parameter '" + name + "' has rank > 2");
  }
}

void ParamMap::add(std::string name, std::vector<Index> shape, std::vector<double> values) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  if (shape_count(shape) != static_cast<Index>(values.size())) {
    throw ContractError("parameter '" + name + "': value count does not match shape");
  }
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

void ParamMap::add(std::string name, std::vector<Index> shape, const Tensor& values) {
  add(std::move(name), std::move(shape), std::vector<double>(values.values().begin(), values.values().end()));
}

bool ParamMap::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const ParamEntry& ParamMap::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw SignatureError("missing parameter '" + std::string(name) + "'");
}

ParamEntry& ParamMap::at(std::string_view name) {
  return const_cast<ParamEntry&>(static_cast<const ParamMap&>(*this).at(name));
}

Index ParamMap::total_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.count();
  return n;
}

std::vector<double> ParamMap::flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(total_count()));
  for (const auto& e : entries_) flat.insert(flat.end(), e.values.begin(), e.values.end());
  return flat;
}

void ParamMap::assign_flat(std::span<const double> flat) {
  if (static_cast<Index>(flat.size()) != total_count()) throw ContractError("assign_flat: size mismatch");
  std::size_t at = 0;
  for (auto& e : entries_) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + e.values.size()), e.values.begin());
    at += e.values.size();
  }
}

ParamMap ParamMap::zeros_like() const {
  ParamMap out = *this;
  for (auto& e : out.entries_) std::fill(e.values.begin(), e.values.end(), 0.0);
  return out;
}

double ParamMap::max_abs() const {
  double m = 0.0;
  for (const auto& e : entries_) {
    for (double v : e.values) m = std::max(m, std::abs(v));
  }
  return m;
}

bool ParamMap::all_finite() const {
  for (const auto& e : entries_) {
    for (double v : e.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::string serialize_binary(const ParamMap& params) {
  std::string out(kMagic);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint32_t>(out, kEndianTag);
  put_le<std::uint64_t>(out, params.size());
  for (const auto& e : params.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : e.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParamMap deserialize_binary(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) throw ConfigError("not a ctflow binary param file");
  if (r.get<std::uint32_t>() != 1) throw ConfigError("unsupported param file version");
  if (r.get<std::uint32_t>() != kEndianTag) throw ConfigError("param file endian tag mismatch");
  const auto count = r.get<std::uint64_t>();
  ParamMap out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name(r.take(len));
    const auto rank = r.get<std::uint32_t>();
    std::vector<Index> shape(rank);
    for (auto& d : shape) d = static_cast<Index>(r.get<std::uint64_t>());
    std::vector<double> values(static_cast<std::size_t>(shape_count(shape)));
    for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
    out.add(std::move(name), std::move(shape), std::move(values));
  }
  if (!r.done()) throw ConfigError("trailing bytes in param file");
  return out;
}

std::string serialize_text(const ParamMap& params) {
  std::string out = "ctflow-params 1\n";
  char buf[64];
  for (const auto& e : params.entries()) {
    out += "entry " + e.name + " " + std::to_string(e.shape.size());
    for (Index d : e.shape) out += " " + std::to_string(d);
    out += "\n";
    for (std::size_t i = 0; i < e.values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", e.values[i]);
      out += buf;
      out += (i + 1 == e.values.size() || (i + 1) % 8 == 0) ? "\n" : " ";
    }
  }
  return out;
}

ParamMap deserialize_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] != '#' && line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line() || line.rfind("ctflow-params 1", 0) != 0) throw ConfigError("not a ctflow text param file");
  ParamMap out;
  while (next_line()) {
    std::istringstream hdr(line);
    std::string tag, name;
    std::size_t rank = 0;
    if (!(hdr >> tag >> name >> rank) || tag != "entry") throw ConfigError("malformed entry header: " + line);
    std::vector<Index> shape(rank);
    for (auto& d : shape) {
      if (!(hdr >> d)) throw ConfigError("malformed shape for '" + name + "'");
    }
    const auto n = static_cast<std::size_t>(shape_count(shape));
    std::vector<double> values;
    values.reserve(n);
    while (values.size() < n) {
      if (!next_line()) throw ConfigError("truncated values for '" + name + "'");
      std::istringstream vals(line);
      std::string tok;
      while (vals >> tok) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') throw ConfigError("bad value '" + tok + "' in '" + name + "'");
        values.push_back(v);
      }
    }
    if (values.size() != n) throw ConfigError("too many values for '" + name + "'");
    out.add(name, std::move(shape), std::move(values));
  }
  return out;
}

void save_params(const ParamMap& params, const std::filesystem::path& path) {
  const bool text = path.extension() == ".txt";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  const std::string bytes = text ? serialize_text(params) : serialize_binary(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamMap load_params(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.rfind(kMagic, 0) == 0) return deserialize_binary(bytes);
  return deserialize_text(bytes);
}

}  // namespace ctflow
