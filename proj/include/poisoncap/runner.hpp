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

#ifndef POISONCAP_RUNNER_HPP
#define POISONCAP_RUNNER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poisoncap/revoker.hpp"
#include "poisoncap/scenario.hpp"

namespace poisoncap {

/// What actually happened when the scenario ran. Traps and double frees
/// are terminal; a cancelled store is recorded and execution continues.
struct Observed {
  Expectation::Kind kind = Expectation::Kind::kOk;
  std::optional<TrapKind> trap_kind;
  std::optional<std::size_t> at_step;
};

/// Identities revoked by one sweep: handle names plus memory word
/// addresses whose tag was cleared. Used by the differential harness.
struct RevocationSet {
  std::vector<std::string> handles;
  std::vector<Addr> words;
  bool operator==(const RevocationSet&) const = default;
};

struct RunOptions {
  std::optional<RevokerChoice> revoker_override;
  std::optional<SemanticsConfig> semantics_override;
  bool collect_decisions = false;
  bool record_revocations = false;
  SweepExec sweep_exec = SweepExec::kParallel;
};

struct RunReport {
  std::string name;
  std::string verdict;  // pass | fail | undetected | error
  Observed observed;
  Expectation expected;
  std::string error_message;

  std::uint64_t cancelled_stores = 0;
  std::uint64_t revoked = 0;
  std::uint64_t shadow_bytes = 0;
  std::uint64_t double_frees = 0;

  AllocStats alloc;
  std::vector<SweepReport> sweeps;
  std::vector<RevocationSet> revocations;
  std::optional<CacheStats> cache;
  std::vector<std::string> notes;
  std::array<std::uint32_t, kPoisonRuleRows> decision_rows{};

  bool passed() const { return verdict == "pass"; }
  /// Stable-ordered JSON; `timestamp` is the only nondeterministic field.
  std::string to_json(bool with_timestamp = true) const;
  std::string to_csv_row() const;
  static std::string csv_header();
};

RunReport run_scenario(const Scenario& scenario, const RunOptions& opts = {});

/// Post-run memory dump of the heap range (plus any extra range), using the
/// stable word dump format.
std::string run_and_dump(const Scenario& scenario, const RunOptions& opts = {});

}  // namespace poisoncap

#endif  // POISONCAP_RUNNER_HPP
