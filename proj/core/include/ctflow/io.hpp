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

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ctflow/tensor.hpp"

namespace ctflow {

// Shortest text that parses back to the same double ("%.17g").
std::string format_double(double v);

// Comma-separated table with a header row.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(const std::vector<std::string>& cells);
  void add_row(const std::vector<double>& values);
  std::string str() const;
  std::size_t rows() const { return rows_; }

 private:
  std::size_t width_;
  std::string text_;
  std::size_t rows_ = 0;
};

// Numeric CSV: every row has the same number of columns; a first row holding
// any non-numeric cell is treated as a header and skipped.
Tensor parse_csv_matrix(std::string_view text);
Tensor read_csv_matrix(const std::filesystem::path& path);
std::string matrix_to_csv(const Tensor& m, const std::vector<std::string>& header);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace ctflow
