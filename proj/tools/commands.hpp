// Copyright 2026 The histopatch Authors. All Rights Reserved.
//
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

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace histopatch::cli {

/// Parses `histopatch <subcommand> [options]` and runs it. Returns 0 on full
/// success, 2 when some slides were missed and 1 on a fatal error.
int run_cli(int argc, const char* const* argv);

/// Same, with the arguments after the program name.
int run_cli(const std::vector<std::string>& args);

/// Worker count for `items` jobs: `requested` (0 = hardware concurrency),
/// capped by HISTOPATCH_THREADS when set, never above `items` or below 1.
int resolve_workers(int requested, std::size_t items);

/// Runs fn(0..n-1) on `workers` threads pulling indices from a shared counter.
/// `fn` must not throw.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace histopatch::cli
