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

#ifndef POISONCAP_WORKLOAD_HPP
#define POISONCAP_WORKLOAD_HPP

#include <cstdint>
#include <string>

#include "poisoncap/cachesim.hpp"
#include "poisoncap/runner.hpp"
#include "poisoncap/scenario.hpp"

namespace poisoncap {

/// Seeded single-layer workload over the default heap: malloc/store/load/
/// store_cap/free plus periodic sweep+flush pairs. Accesses touch only
/// live, previously written locations, so the same step list runs
/// identically under the poison and shadow revokers; dangling handles
/// accumulate as revocation candidates.
Scenario gen_random_workload(std::uint64_t seed, std::uint64_t n_ops,
                             bool nested = false);

struct CompareResult {
  bool equal = false;
  std::string divergence;  // empty when equal
  std::uint64_t sweeps = 0;
  std::uint64_t poison_shadow_bytes = 0;
  std::uint64_t baseline_shadow_bytes = 0;
};

/// Runs the identical op sequence under both revokers and compares the
/// revoked capability sets element-wise. Nested workloads are rejected:
/// the bitmap cannot express allocation layers.
CompareResult compare_revokers(std::uint64_t seed, std::uint64_t n_ops,
                               bool nested = false);

// ---------------------------------------------------------------------------
// Cache churn workloads

enum class ChurnFreeMode : std::uint8_t {
  kPoison,  // free paints poison (lines become exclusively poison)
  kZero,    // free writes zeros (baseline zero-on-free)
};

struct ChurnParams {
  std::uint64_t iterations = 400;
  unsigned hot_fraction_of_llc = 2;   // hot set = llc lines / fraction
  unsigned churn_lines_per_iter = 6;  // freshly allocated+freed lines
  unsigned hot_touches_per_iter = 4;
  ChurnFreeMode free_mode = ChurnFreeMode::kPoison;
};

/// Allocation-churn trace: a recurring hot working set interleaved with
/// short-lived buffers that are written and then freed. Under the zero
/// mode the frees store zeros; under the poison mode the identical stores
/// paint poison, making the dead lines visible to the replacement policy.
std::vector<TraceOp> gen_churn_trace(std::uint64_t seed,
                                     const CacheGeometry& geom,
                                     const ChurnParams& params = {});

struct ChurnComparison {
  CacheStats poison_aware;
  CacheStats lru;
  std::uint64_t total_misses(const CacheStats& s) const {
    return s.l1.misses + s.llc.misses;
  }
};

/// Runs the identical churn trace under poison-aware and plain-LRU
/// replacement.
ChurnComparison run_churn_ab(std::uint64_t seed, const CacheGeometry& geom,
                             const ChurnParams& params = {});

}  // namespace poisoncap

#endif  // POISONCAP_WORKLOAD_HPP
