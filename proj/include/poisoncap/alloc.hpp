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

#ifndef POISONCAP_ALLOC_HPP
#define POISONCAP_ALLOC_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poisoncap/memory.hpp"

namespace poisoncap {

class ShadowBitmap;

// ---------------------------------------------------------------------------
// Sweep epochs
//
// A quarantined region may only be recycled once a revocation sweep has
// completed after the free that quarantined it. Sweeps advance a clock and
// hand back a token; the allocator checks the token before flushing.

class SweepClock {
 public:
  std::uint64_t completed() const { return completed_; }
  std::uint64_t advance() { return ++completed_; }

 private:
  std::uint64_t completed_ = 0;
};

struct SweepToken {
  std::uint64_t epoch = 0;
};

// ---------------------------------------------------------------------------
// Errors and statistics

enum class AllocErrorKind : std::uint8_t {
  kOutOfMemory,
  kDoubleFree,
  kInvalidFree,
  kStaleSweep,
  kConfigError,
  kPermissionViolation,
  kMonotonicityViolation,
  kInternal,
};

std::string to_string(AllocErrorKind k);

/// Allocator failure. When an architectural trap surfaced through an
/// allocator operation (e.g. the poison store inside free hit live foreign
/// poison), the trap kind rides along for precise reporting.
struct AllocError {
  AllocErrorKind kind;
  std::optional<TrapKind> trap;
  bool operator==(const AllocError&) const = default;
};

struct AllocStats {
  std::uint64_t live_bytes = 0;
  std::uint64_t quarantine_bytes = 0;
  std::uint64_t sweeps_triggered = 0;
  std::uint64_t double_frees = 0;
  std::uint64_t version_flips = 0;
};

enum class ReallocPolicy : std::uint8_t { kLazyDetox, kEagerZero };

struct HeapConfig {
  Bounds heap_bounds;
  double quarantine_threshold_pct = 25.0;
  ReallocPolicy realloc_policy = ReallocPolicy::kLazyDetox;
  std::uint8_t fresh_poison_version = 0;
};

/// Selects what free() paints: poison capabilities carrying the freed
/// bounds and version, or a bit in the revoker-provided shadow bitmap with
/// zeroing on free (the Cornucopia-style baseline).
enum class HeapBackend : std::uint8_t { kPoison, kShadow };

// ---------------------------------------------------------------------------
// Heap

/// libc-style quarantining allocator over a tagged memory region.
///
/// Poison backend behaviour:
///  - malloc rounds sizes to the 16-byte granule and hands out capabilities
///    with user permissions and the opposite version of the region's
///    previous occupant; fresh regions are first painted with poison of the
///    configured fresh version.
///  - free probes the base word for existing poison (double-free check),
///    repaints the allocation through the freed capability itself, and
///    quarantines it. Reaching the quarantine threshold raises a revocation
///    request that the owner must service with a sweep.
///  - quarantine_flush recycles quarantined regions; it demands a sweep
///    token newer than the last free.
///
/// Freelist metadata never lives inside freed memory.
class Heap {
 public:
  static Result<Heap, AllocError> create(TaggedMemory& mem, Capability root,
                                         const HeapConfig& cfg,
                                         const SemanticsConfig& semantics,
                                         const SweepClock* clock,
                                         HeapBackend backend = HeapBackend::kPoison,
                                         ShadowBitmap* bitmap = nullptr);

  Result<Capability, AllocError> malloc(std::uint64_t size);
  Result<Unit, AllocError> free(const Capability& cap);
  /// Returns the number of bytes recycled.
  Result<std::uint64_t, AllocError> quarantine_flush(SweepToken token);

  bool revocation_requested() const { return revocation_requested_; }
  void clear_revocation_request() { revocation_requested_ = false; }

  const AllocStats& stats() const { return stats_; }
  const HeapConfig& config() const { return cfg_; }
  HeapBackend backend() const { return backend_; }
  const SemanticsConfig& semantics() const { return semantics_; }
  const SweepClock* clock() const { return clock_; }
  const Capability& root() const { return root_; }
  /// Heap-bounds capability without the poison privilege; detox and
  /// baseline zeroing go through it (upstream-allocator bounds rule).
  const Capability& heap_cap() const { return heap_cap_; }
  TaggedMemory& memory() { return *mem_; }

  /// Live allocation lookup by exact bounds (harness bookkeeping).
  bool is_live(const Bounds& b) const;

 private:
  enum class RegionState : std::uint8_t { kLive, kQuarantined, kRecycled };
  struct Region {
    std::uint64_t length = 0;
    RegionState state = RegionState::kRecycled;
    std::uint8_t version = 0;  // version of the most recent occupant
  };

  Heap(TaggedMemory& mem, Capability root, Capability heap_cap,
       const HeapConfig& cfg, const SemanticsConfig& semantics,
       const SweepClock* clock, HeapBackend backend, ShadowBitmap* bitmap);

  Result<Capability, AllocError> mint_user_cap(const Bounds& bounds,
                                               std::uint8_t version);
  Result<Unit, AllocError> detox_region(const Bounds& bounds);
  Result<Unit, AllocError> zero_region(const Bounds& bounds);
  std::optional<PoisonWord> read_poison_at(Addr addr) const;
  void maybe_request_revocation();

  TaggedMemory* mem_;
  Capability root_;
  Capability heap_cap_;
  HeapConfig cfg_;
  SemanticsConfig semantics_;
  const SweepClock* clock_;
  HeapBackend backend_;
  ShadowBitmap* bitmap_;

  // Regions keyed by base address; exact cover of [heap_bounds) minus the
  // untouched tail above fresh_cursor_. Live/quarantined regions are
  // allocations; recycled ones are reusable.
  std::map<Addr, Region> regions_;
  Addr fresh_cursor_;
  std::uint64_t last_free_epoch_ = 0;
  bool revocation_requested_ = false;
  AllocStats stats_;
};

// ---------------------------------------------------------------------------
// Nested arena (MEMSYS5-style buddy suballocator)
//
// The arena never holds the poison privilege: the strictly wider bounds of
// its arena capability authorise poison probing and detox of freed
// suballocations. Buddy metadata lives outside the arena memory.

class Arena {
 public:
  static Result<Arena, AllocError> create(Heap& parent, std::uint64_t size,
                                          double quarantine_threshold_pct = 25.0);

  Result<Capability, AllocError> malloc(std::uint64_t size);
  Result<Unit, AllocError> free(const Capability& cap);
  Result<std::uint64_t, AllocError> quarantine_flush(SweepToken token);

  const Capability& arena_cap() const { return arena_cap_; }
  const AllocStats& stats() const { return stats_; }
  bool revocation_requested() const { return revocation_requested_; }
  void clear_revocation_request() { revocation_requested_ = false; }

 private:
  struct Block {
    unsigned order;  // block length = 16 << order
    enum class State : std::uint8_t { kFree, kLive, kQuarantined } state;
    // A block that ever carried a suballocation holds arena-layer poison
    // after recycling and must be detoxed (zeroed through the arena cap)
    // before reuse. Never-allocated blocks keep the parent layer's poison,
    // preserving initialisation safety for first use.
    bool dirty = false;
  };

  Arena(Heap& parent, Capability arena_cap, double threshold_pct);

  std::uint64_t block_len(unsigned order) const {
    return kWordBytes << order;
  }
  std::optional<Addr> take_free_block(unsigned order);
  void insert_and_merge(Addr base, unsigned order, bool dirty);
  Result<Unit, AllocError> detox_block(const Bounds& bounds);

  Heap* parent_;
  TaggedMemory* mem_;
  Capability arena_cap_;
  SemanticsConfig semantics_;
  const SweepClock* clock_;
  double threshold_pct_;
  unsigned arena_order_;
  unsigned max_order_;  // largest grantable order (strictly below the arena)

  std::map<Addr, Block> blocks_;
  std::uint64_t last_free_epoch_ = 0;
  bool revocation_requested_ = false;
  AllocStats stats_;
};

/// Rounds up to the 16-byte allocation granule.
constexpr std::uint64_t round_up_granule(std::uint64_t size) {
  return (size + kWordBytes - 1) & ~(kWordBytes - 1);
}

/// Smallest power-of-two block size >= size, with a floor of 16.
std::uint64_t round_up_pow2_block(std::uint64_t size);

}  // namespace poisoncap

#endif  // POISONCAP_ALLOC_HPP
