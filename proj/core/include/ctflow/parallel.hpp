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

#include <functional>

#include "ctflow/tensor.hpp"

namespace ctflow {

// Number of worker threads used by row-parallel loops. Results never depend
// on this value: parallel work is split by rows and every row draws from its
// own random stream.
int worker_count();
void set_worker_count(int workers);

// Runs body(begin, end) over a partition of [0, n). If several chunks throw,
// the exception from the lowest chunk is rethrown.
void parallel_for_rows(Index n, const std::function<void(Index begin, Index end)>& body);

}  // namespace ctflow
