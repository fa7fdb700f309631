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

#ifndef POISONCAP_CACHESIM_HPP
#define POISONCAP_CACHESIM_HPP

#include <cstdint>
#include <vector>

#include "poisoncap/memory.hpp"

namespace poisoncap {

struct LevelGeometry {
  unsigned ways = 0;
  std::uint64_t capacity_bytes = 0;
};

/// Two-level inclusive hierarchy. Line size 64 bytes = 4 capability words,
/// so four poison stores make a line exclusively poison.
struct CacheGeometry {
  unsigned line_bytes = 64;
  LevelGeometry l1;
  LevelGeometry llc;

  /// 4-way 32 KiB L1 data cache over a 16-way 1 MiB last-level cache.
  static CacheGeometry paper() {
    return {64, {4, 32 * 1024}, {16, 1024 * 1024}};
  }
  /// Scaled-down preset for desk-size runs.
  static CacheGeometry desk() { return {64, {2, 1024}, {4, 8 * 1024}}; }
};

enum class CachePolicy : std::uint8_t { kLru, kPoisonAware };

struct LevelStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t writebacks = 0;
  std::uint64_t dram_bytes = 0;
  bool operator==(const LevelStats&) const = default;
};

struct CacheStats {
  LevelStats l1;
  LevelStats llc;
  bool operator==(const CacheStats&) const = default;
};

/// Writeback, write-allocate, inclusive two-level model with per-line
/// "exclusively poison" flags. Victim selection prefers the
/// least-recently-used poisoned line; with no poisoned candidates (or under
/// the plain-LRU policy) it falls back to LRU, so with zero poison
/// activity both policies behave identically.
///
/// Word-granule poison state lives in a side map fed by memory commits;
/// the cache is an observer and never the source of truth.
class CacheHierarchy {
 public:
  CacheHierarchy(const CacheGeometry& geom, CachePolicy policy,
                 std::uint64_t memory_bytes);

  /// One committed memory access. `word_is_poison_after` is the poison
  /// state of the touched word once the operation completed; it updates
  /// the side map on writes.
  void access(Addr addr, AccessKind kind, bool word_is_poison_after);

  const CacheStats& stats() const { return stats_; }
  const CacheGeometry& geometry() const { return geom_; }
  CachePolicy policy() const { return policy_; }

  /// Exposed for tests: selected victim way for a full set, honouring the
  /// poison preference.
  unsigned victim_way(unsigned level, std::uint64_t set_index) const;
  bool line_present(unsigned level, Addr addr) const;
  bool line_poisoned(unsigned level, Addr addr) const;

 private:
  struct Line {
    bool valid = false;
    bool dirty = false;
    bool poisoned = false;
    std::uint64_t tag = 0;
    std::uint64_t lru_rank = 0;  // older = smaller
  };
  struct Level {
    unsigned ways = 0;
    std::uint64_t sets = 0;
    std::vector<Line> lines;  // sets * ways

    Line* find(std::uint64_t set, std::uint64_t tag);
    std::uint64_t set_of(Addr line_addr) const { return line_addr % sets; }
  };

  Addr line_addr(Addr addr) const { return addr / geom_.line_bytes; }
  bool words_all_poisoned(Addr line_addr) const;
  void refresh_poison_flag(Addr line_addr);
  unsigned pick_victim(const Level& lv, std::uint64_t set) const;
  void install(unsigned level_idx, Addr line_addr, bool dirty);
  void evict_from_l1(Addr line_addr);

  CacheGeometry geom_;
  CachePolicy policy_;
  Level l1_;
  Level llc_;
  CacheStats stats_;
  std::vector<bool> word_poisoned_;
  std::uint64_t tick_ = 0;
};

struct TraceOp {
  Addr addr = 0;
  AccessKind kind = AccessKind::kRead;
  bool poison_after = false;
};

/// Replays a trace; deterministic for a given trace and geometry.
CacheStats run_trace(CacheHierarchy& hier, const std::vector<TraceOp>& trace);

}  // namespace poisoncap

#endif  // POISONCAP_CACHESIM_HPP
