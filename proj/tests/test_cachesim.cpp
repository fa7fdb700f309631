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

#include <random>
#include <set>

#include "doctest.h"
#include "poisoncap/cachesim.hpp"
#include "poisoncap/workload.hpp"

using namespace poisoncap;

namespace {

constexpr std::uint64_t kMemBytes = 1 << 20;

CacheHierarchy make_desk(CachePolicy policy) {
  return CacheHierarchy(CacheGeometry::desk(), policy, kMemBytes);
}

void poison_line(CacheHierarchy& cache, Addr line_base) {
  for (unsigned w = 0; w < 4; ++w) {
    cache.access(line_base + w * kWordBytes, AccessKind::kWrite, true);
  }
}

}  // namespace

TEST_CASE("repeated access to one address misses once then hits") {
  CacheHierarchy cache = make_desk(CachePolicy::kPoisonAware);
  for (int i = 0; i < 10; ++i) {
    cache.access(0x1000, AccessKind::kRead, false);
  }
  CHECK(cache.stats().l1.misses == 1);
  CHECK(cache.stats().l1.hits == 9);
  CHECK(cache.stats().llc.misses == 1);
  CHECK(cache.stats().llc.dram_bytes == 64);
}

TEST_CASE("four poison word stores mark a line exclusively poison; a later "
          "auto-zero write clears the mark") {
  CacheHierarchy cache = make_desk(CachePolicy::kPoisonAware);
  poison_line(cache, 0x2000);
  CHECK(cache.line_poisoned(0, 0x2000));
  CHECK(cache.line_poisoned(1, 0x2000));

  // Partial poison is not enough.
  cache.access(0x3000, AccessKind::kWrite, true);
  CHECK(!cache.line_poisoned(0, 0x3000));

  // An 8-byte auto-zero write breaks the exclusively-poison state.
  cache.access(0x2000, AccessKind::kWrite, false);
  CHECK(!cache.line_poisoned(0, 0x2000));
}

TEST_CASE("victim selection prefers the LRU poisoned line") {
  // Desk L1: 2-way, 8 sets, 64-byte lines; set stride is 512 bytes.
  CacheHierarchy cache = make_desk(CachePolicy::kPoisonAware);
  const Addr set0_a = 0x0000;
  const Addr set0_b = 0x0200;

  // Fill both ways of set 0; poison the more recently used one (b).
  cache.access(set0_a, AccessKind::kRead, false);
  poison_line(cache, set0_b);
  CHECK(cache.victim_way(0, 0) == 1);  // way holding b, despite being MRU

  // With no poisoned line, plain LRU picks the older way.
  CacheHierarchy lru = make_desk(CachePolicy::kPoisonAware);
  lru.access(set0_a, AccessKind::kRead, false);
  lru.access(set0_b, AccessKind::kRead, false);
  CHECK(lru.victim_way(0, 0) == 0);

  // Two poisoned lines: the older of the two goes first.
  CacheHierarchy both = make_desk(CachePolicy::kPoisonAware);
  poison_line(both, set0_a);
  poison_line(both, set0_b);
  CHECK(both.victim_way(0, 0) == 0);

  // The plain-LRU policy ignores poison entirely.
  CacheHierarchy plain = make_desk(CachePolicy::kLru);
  plain.access(set0_a, AccessKind::kRead, false);
  poison_line(plain, set0_b);
  CHECK(plain.victim_way(0, 0) == 0);
}

TEST_CASE("empty trace produces all-zero stats") {
  CacheHierarchy cache = make_desk(CachePolicy::kPoisonAware);
  const CacheStats stats = run_trace(cache, {});
  CHECK(stats == CacheStats{});
}

TEST_CASE("with zero poison activity both policies are bit-identical") {
  std::mt19937_64 rng(0xCAFE);
  std::vector<TraceOp> trace;
  for (int i = 0; i < 20000; ++i) {
    const Addr addr = (rng() % (kMemBytes / 8)) * 8;
    trace.push_back({addr,
                     (rng() % 3 == 0) ? AccessKind::kWrite
                                      : AccessKind::kRead,
                     false});
  }
  CacheHierarchy pa = make_desk(CachePolicy::kPoisonAware);
  CacheHierarchy lru = make_desk(CachePolicy::kLru);
  CHECK(run_trace(pa, trace) == run_trace(lru, trace));
}

TEST_CASE("inclusive hierarchy: touched lines resident in L1 are resident "
          "in the LLC") {
  std::mt19937_64 rng(0xD00D);
  CacheHierarchy cache = make_desk(CachePolicy::kPoisonAware);
  std::set<Addr> touched;
  for (int i = 0; i < 5000; ++i) {
    const Addr addr = (rng() % (kMemBytes / 64)) * 64;
    touched.insert(addr);
    cache.access(addr, (rng() % 4 == 0) ? AccessKind::kWrite
                                        : AccessKind::kRead,
                 rng() % 8 == 0);
  }
  for (Addr addr : touched) {
    if (cache.line_present(0, addr)) {
      CHECK(cache.line_present(1, addr));
    }
  }
}

TEST_CASE("churn workload: poison-aware replacement never does worse and "
          "beats LRU on the adversarial shape") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    ChurnComparison ab = run_churn_ab(seed, CacheGeometry::desk());
    const std::uint64_t pa = ab.total_misses(ab.poison_aware);
    const std::uint64_t lru = ab.total_misses(ab.lru);
    CAPTURE(seed);
    CHECK(pa <= lru);
  }
  // The designed adversarial workload shows a clear gap.
  ChurnComparison ab = run_churn_ab(1, CacheGeometry::desk());
  CHECK(ab.total_misses(ab.poison_aware) * 100 <=
        ab.total_misses(ab.lru) * 95);
}

TEST_CASE("zero-on-free variant writes more traffic than poisoning at the "
          "same line count") {
  ChurnParams poison_params;
  ChurnParams zero_params;
  zero_params.free_mode = ChurnFreeMode::kZero;
  const CacheGeometry geom = CacheGeometry::desk();

  // Poison mode runs under the poison-aware policy; the zero mode has
  // nothing to mark, so it runs under plain LRU.
  ChurnComparison with_poison = run_churn_ab(3, geom, poison_params);
  ChurnComparison with_zero = run_churn_ab(3, geom, zero_params);
  const std::uint64_t poison_wb = with_poison.poison_aware.llc.writebacks +
                                  with_poison.poison_aware.l1.writebacks;
  const std::uint64_t zero_wb =
      with_zero.lru.llc.writebacks + with_zero.lru.l1.writebacks;
  CHECK(zero_wb > poison_wb);
}
