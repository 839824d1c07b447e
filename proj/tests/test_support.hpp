// Copyright (c) 2026 The sage-decode Authors
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

// Filesystem helpers shared by the harness tests and the acceptance binary.

#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sage/scenario.hpp"

namespace sage::testing {

namespace fs = std::filesystem;

inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(SAGE_TEST_SCRATCH_DIR) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Relative path -> file bytes for every regular file under `root`.
inline std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_text(e.path().string());
  }
  return out;
}

inline bool update_goldens() {
  const char* v = std::getenv("SAGE_UPDATE_GOLDENS");
  return v && std::string(v) == "1";
}

// Compares traces/<id>.jsonl against golden/<id>.jsonl. With
// SAGE_UPDATE_GOLDENS=1 the goldens are rewritten instead. Returns the ids
// that differ or are missing on either side.
inline std::vector<std::string> golden_mismatches(const fs::path& traces, const fs::path& golden) {
  std::vector<std::string> bad;
  const auto got = tree_bytes(traces);
  if (update_goldens()) {
    fs::remove_all(golden);
    fs::create_directories(golden);
    for (const auto& [name, bytes] : got) write_text((golden / name).string(), bytes);
    return bad;
  }
  const auto want = fs::exists(golden) ? tree_bytes(golden) : std::map<std::string, std::string>{};
  for (const auto& [name, bytes] : want) {
    auto it = got.find(name);
    if (it == got.end() || it->second != bytes) bad.push_back(name);
  }
  for (const auto& [name, bytes] : got)
    if (!want.count(name)) bad.push_back(name);
  if (want.empty()) bad.push_back("<no goldens>");
  return bad;
}

}  // namespace sage::testing
