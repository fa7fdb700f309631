// Copyright 2026 The PoisonCap Simulator Authors
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

#ifndef POISONCAP_SCENARIO_HPP
#define POISONCAP_SCENARIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poisoncap/alloc.hpp"
#include "poisoncap/cachesim.hpp"
#include "poisoncap/memory.hpp"

namespace poisoncap {

enum class OpKind : std::uint8_t {
  kMalloc,
  kFree,
  kArenaNew,
  kArenaMalloc,
  kArenaFree,
  kLoad,
  kStore,
  kStoreCap,
  kLoadCap,
  kCpoison,
  kCgetpoison,
  kSweep,
  kFlush,
  kCacheNote,
};

std::string to_string(OpKind op);

/// One declarative step. Handles are named capability slots; `dst` binds,
/// `ptr`/`src`/`arena` reference earlier definitions.
struct Step {
  OpKind op = OpKind::kCacheNote;
  std::string dst;
  std::string ptr;
  std::string src;
  std::string arena;
  std::uint64_t size = 0;
  std::uint64_t offset = 0;
  unsigned width = 0;
  std::uint64_t value = 0;
  std::uint64_t words = 1;
  std::optional<std::uint64_t> expect_value;
  std::optional<bool> expect_bool;
  std::string note;
};

struct Expectation {
  enum class Kind : std::uint8_t { kOk, kTrap, kCancelled, kDoubleFree };
  Kind kind = Kind::kOk;
  std::optional<TrapKind> trap_kind;
  std::optional<std::size_t> at_step;
  bool operator==(const Expectation&) const = default;
};

std::string to_string(Expectation::Kind k);

enum class RevokerChoice : std::uint8_t { kPoison, kShadow, kNone };

std::string to_string(RevokerChoice r);

/// Extra root capabilities minted before step zero; lets scenarios exercise
/// privileged and partially-overlapping bounds cases that malloc alone
/// cannot produce.
struct GenesisCap {
  std::string name;
  Bounds bounds;
  PermSet perms = PermSet::all();
  std::uint8_t version = 0;
};

struct ScenarioConfig {
  SemanticsConfig semantics;
  RevokerChoice revoker = RevokerChoice::kPoison;
  bool cache = false;
  CacheGeometry cache_geometry = CacheGeometry::desk();
  std::uint64_t memory_bytes = 256 * 1024;
  HeapConfig heap{Bounds{0x10000, 64 * 1024}};
  std::vector<GenesisCap> genesis;
};

struct Scenario {
  std::string name;
  std::vector<std::string> tags;
  ScenarioConfig config;
  std::vector<Step> steps;
  Expectation expect;

  bool has_tag(const std::string& tag) const;
};

struct ParseError {
  std::string message;
  std::string where;  // json pointer-ish location or line info
};

/// Parses the JSON scenario format; validates ops, handles, and widths.
Result<Scenario, ParseError> parse_scenario(const std::string& text);
Result<Scenario, ParseError> load_scenario_file(const std::string& path);

}  // namespace poisoncap

#endif  // POISONCAP_SCENARIO_HPP
