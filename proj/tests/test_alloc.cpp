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

#include <map>
#include <random>

#include "doctest.h"
#include "poisoncap/alloc.hpp"
#include "poisoncap/revoker.hpp"

using namespace poisoncap;

namespace {

constexpr std::uint64_t kMemBytes = 256 * 1024;
constexpr Bounds kHeapBounds{0x10000, 64 * 1024};

struct Fixture {
  TaggedMemory mem{kMemBytes};
  SweepClock clock;
  Capability root{Bounds{0, kMemBytes}, PermSet::all(), 0, true};
  SemanticsConfig cfg = SemanticsConfig::strict();

  Heap make_heap(HeapConfig hc = HeapConfig{kHeapBounds}) {
    auto heap = Heap::create(mem, root, hc, cfg, &clock);
    REQUIRE(heap.ok());
    return std::move(heap).take();
  }

  SweepToken sweep() {
    RootSet roots;
    roots.memory_regions.push_back(Bounds{0, kMemBytes});
    return sweep_poison(mem, roots, root, clock).token();
  }
};

}  // namespace

TEST_CASE("heap_new validates configuration") {
  Fixture f;
  Heap heap = f.make_heap();
  CHECK(heap.stats().quarantine_bytes == 0);
  CHECK(heap.stats().live_bytes == 0);

  auto zero_threshold = Heap::create(
      f.mem, f.root, HeapConfig{kHeapBounds, 0.0}, f.cfg, &f.clock);
  REQUIRE(!zero_threshold.ok());
  CHECK(zero_threshold.error().kind == AllocErrorKind::kConfigError);

  Capability narrow{Bounds{0, 0x1000}, PermSet::all(), 0, true};
  auto outside = Heap::create(f.mem, narrow, HeapConfig{kHeapBounds}, f.cfg,
                              &f.clock);
  REQUIRE(!outside.ok());
  CHECK(outside.error().kind == AllocErrorKind::kMonotonicityViolation);

  Capability no_write{Bounds{0, kMemBytes},
                      PermSet::user().without(Perm::kWrite), 0, true};
  auto lacking = Heap::create(f.mem, no_write, HeapConfig{kHeapBounds}, f.cfg,
                              &f.clock);
  REQUIRE(!lacking.ok());
  CHECK(lacking.error().kind == AllocErrorKind::kPermissionViolation);
}

TEST_CASE("first malloc returns version 1 over fresh version-0 poison") {
  Fixture f;
  Heap heap = f.make_heap();
  auto cap = heap.malloc(32);
  REQUIRE(cap.ok());
  CHECK(cap.value().bounds.length == 32);
  CHECK(cap.value().version == 1);
  CHECK(!cap.value().perms.has(Perm::kPoison));
  CHECK(PermSet::user().subset_of(cap.value().perms));

  for (Addr a = cap.value().bounds.base; a < cap.value().bounds.limit();
       a += kWordBytes) {
    auto word = f.mem.decode_at(a);
    REQUIRE(std::holds_alternative<PoisonWord>(word));
    const auto& p = std::get<PoisonWord>(word);
    CHECK(p.version == 0);
    CHECK(p.bounds == cap.value().bounds);
  }
}

TEST_CASE("size rounding and eager-zero policy") {
  Fixture f;
  HeapConfig hc{kHeapBounds};
  hc.realloc_policy = ReallocPolicy::kEagerZero;
  Heap heap = f.make_heap(hc);
  auto cap = heap.malloc(1);
  REQUIRE(cap.ok());
  CHECK(cap.value().bounds.length == 16);
  const WordImage& w = f.mem.word_at(cap.value().bounds.base);
  CHECK(!w.tag);
  for (auto b : w.raw) CHECK(b == 0);
  auto loaded = f.mem.load(cap.value(), cap.value().bounds.base, 8, f.cfg);
  REQUIRE(loaded.ok());
}

TEST_CASE("free poisons, quarantines, and detects reuse") {
  Fixture f;
  Heap heap = f.make_heap();
  auto cap = heap.malloc(48);
  REQUIRE(cap.ok());
  REQUIRE(heap.free(cap.value()).ok());

  // Every word of the allocation reports poison with the freed bounds.
  for (Addr a = cap.value().bounds.base; a < cap.value().bounds.limit();
       a += kWordBytes) {
    auto word = f.mem.decode_at(a);
    REQUIRE(std::holds_alternative<PoisonWord>(word));
    CHECK(std::get<PoisonWord>(word).bounds == cap.value().bounds);
    CHECK(std::get<PoisonWord>(word).version == 1);
  }
  CHECK(heap.stats().quarantine_bytes == 48);

  // Use after free traps.
  auto uaf = f.mem.load(cap.value(), cap.value().bounds.base, 8, f.cfg);
  REQUIRE(!uaf.ok());
  CHECK(uaf.error().kind == TrapKind::kUseAfterFree);

  // Double free is detected with no mutation.
  auto twice = heap.free(cap.value());
  REQUIRE(!twice.ok());
  CHECK(twice.error().kind == AllocErrorKind::kDoubleFree);
  CHECK(heap.stats().double_frees == 1);
  CHECK(heap.stats().quarantine_bytes == 48);
}

TEST_CASE("invalid frees are rejected") {
  Fixture f;
  Heap heap = f.make_heap();
  auto cap = heap.malloc(32);
  REQUIRE(cap.ok());

  Capability bogus = cap.value();
  bogus.bounds.length = 16;  // not an allocation boundary
  auto sub = heap.free(bogus);
  REQUIRE(!sub.ok());
  CHECK(sub.error().kind == AllocErrorKind::kInvalidFree);

  Capability untagged = cap.value();
  untagged.tag = false;
  CHECK(heap.free(untagged).error().kind == AllocErrorKind::kInvalidFree);
}

TEST_CASE("quarantine flush demands a fresh sweep token") {
  Fixture f;
  Heap heap = f.make_heap();
  auto cap = heap.malloc(32);
  REQUIRE(cap.ok());
  REQUIRE(heap.free(cap.value()).ok());

  auto stale = heap.quarantine_flush(SweepToken{0});
  REQUIRE(!stale.ok());
  CHECK(stale.error().kind == AllocErrorKind::kStaleSweep);

  const SweepToken token = f.sweep();
  auto flushed = heap.quarantine_flush(token);
  REQUIRE(flushed.ok());
  CHECK(flushed.value() == 32);
  CHECK(heap.stats().quarantine_bytes == 0);

  // A token from before a newer free is stale again.
  auto cap2 = heap.malloc(32);
  REQUIRE(cap2.ok());
  REQUIRE(heap.free(cap2.value()).ok());
  auto reused = heap.quarantine_flush(token);
  REQUIRE(!reused.ok());
  CHECK(reused.error().kind == AllocErrorKind::kStaleSweep);
}

TEST_CASE("version alternates across reuse with a sweep between") {
  Fixture f;
  Heap heap = f.make_heap();
  auto first = heap.malloc(64);
  REQUIRE(first.ok());
  const Addr base = first.value().bounds.base;
  CHECK(first.value().version == 1);

  REQUIRE(heap.free(first.value()).ok());
  REQUIRE(heap.quarantine_flush(f.sweep()).ok());

  auto second = heap.malloc(64);
  REQUIRE(second.ok());
  CHECK(second.value().bounds.base == base);  // same region reused
  CHECK(second.value().version == 0);
  CHECK(heap.stats().version_flips == 1);

  REQUIRE(heap.free(second.value()).ok());
  REQUIRE(heap.quarantine_flush(f.sweep()).ok());
  auto third = heap.malloc(64);
  REQUIRE(third.ok());
  CHECK(third.value().bounds.base == base);
  CHECK(third.value().version == 1);
}

TEST_CASE("lazy reuse keeps poison: writes auto-zero, reads trap") {
  Fixture f;
  Heap heap = f.make_heap();
  auto first = heap.malloc(32);
  REQUIRE(first.ok());
  REQUIRE(heap.free(first.value()).ok());
  REQUIRE(heap.quarantine_flush(f.sweep()).ok());

  auto second = heap.malloc(32);
  REQUIRE(second.ok());
  const Addr base = second.value().bounds.base;

  auto uninit = f.mem.load(second.value(), base, 8, f.cfg);
  REQUIRE(!uninit.ok());
  CHECK(uninit.error().kind == TrapKind::kUninitialisedRead);

  REQUIRE(f.mem.store(second.value(), base, 8, {1, 2, 3, 4, 5, 6, 7, 8},
                      f.cfg).ok());
  auto readback = f.mem.load(second.value(), base, 8, f.cfg);
  REQUIRE(readback.ok());
  CHECK(readback.value() == std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("quarantine threshold fires at exactly the crossing free") {
  Fixture f;
  HeapConfig hc{kHeapBounds};
  hc.quarantine_threshold_pct = 25.0;  // 16 KiB of the 64 KiB heap
  Heap heap = f.make_heap(hc);

  std::vector<Capability> caps;
  for (int i = 0; i < 16; ++i) {
    auto cap = heap.malloc(1024);
    REQUIRE(cap.ok());
    caps.push_back(cap.value());
  }
  for (int i = 0; i < 15; ++i) {
    REQUIRE(heap.free(caps[static_cast<std::size_t>(i)]).ok());
    CHECK(!heap.revocation_requested());
  }
  REQUIRE(heap.free(caps[15]).ok());  // quarantine reaches 16 KiB here
  CHECK(heap.revocation_requested());
  CHECK(heap.stats().sweeps_triggered == 1);
}

TEST_CASE("allocator state matches an interval-map oracle over random "
          "alloc/free sequences") {
  std::mt19937_64 rng(0xA110C);
  for (int run = 0; run < 20; ++run) {
    Fixture f;
    Heap heap = f.make_heap();
    std::map<Addr, std::uint64_t> oracle_live;
    std::vector<Capability> live;
    std::uint64_t quarantined_bytes = 0;

    for (int op = 0; op < 50; ++op) {
      const unsigned roll = static_cast<unsigned>(rng() % 100);
      if (roll < 55) {
        const std::uint64_t size = 16ull << (rng() % 4);
        auto cap = heap.malloc(size);
        if (!cap.ok()) {
          CHECK(cap.error().kind == AllocErrorKind::kOutOfMemory);
          continue;
        }
        const Bounds b = cap.value().bounds;
        // Live allocations are pairwise disjoint and inside the heap.
        CHECK(bounds_contains(kHeapBounds, b));
        for (const auto& [obase, olen] : oracle_live) {
          const Bounds other{obase, olen};
          const bool disjoint =
              other.limit() <= b.base || b.limit() <= other.base;
          CHECK(disjoint);
        }
        oracle_live[b.base] = b.length;
        live.push_back(cap.value());
      } else if (!live.empty()) {
        const std::size_t idx = rng() % live.size();
        const Capability cap = live[idx];
        REQUIRE(heap.free(cap).ok());
        oracle_live.erase(cap.bounds.base);
        quarantined_bytes += cap.bounds.length;
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
        // Poison matches the freed capability exactly.
        for (Addr a = cap.bounds.base; a < cap.bounds.limit();
             a += kWordBytes) {
          auto probe = f.mem.cgetpoison(cap, a);
          REQUIRE(probe.ok());
          CHECK(probe.value());
        }
      }
      CHECK(heap.stats().quarantine_bytes == quarantined_bytes);
      std::uint64_t live_bytes = 0;
      for (const auto& [base, len] : oracle_live) live_bytes += len;
      CHECK(heap.stats().live_bytes == live_bytes);
      for (const Capability& cap : live) {
        CHECK(heap.is_live(cap.bounds));
      }
      if (heap.revocation_requested()) {
        REQUIRE(heap.quarantine_flush(f.sweep()).ok());
        heap.clear_revocation_request();
        quarantined_bytes = 0;
      }
    }
  }
}

TEST_CASE("arena rounds to buddy blocks strictly inside the arena") {
  Fixture f;
  Heap heap = f.make_heap();
  auto arena = Arena::create(heap, 4096);
  REQUIRE(arena.ok());
  Arena a = std::move(arena).take();

  auto q = a.malloc(100);
  REQUIRE(q.ok());
  CHECK(q.value().bounds.length == 128);
  CHECK(bounds_strictly_contains(a.arena_cap().bounds, q.value().bounds));

  // The whole arena is never granted as one block.
  auto whole = a.malloc(4096);
  REQUIRE(!whole.ok());
  CHECK(whole.error().kind == AllocErrorKind::kOutOfMemory);
}

TEST_CASE("arena free poisons at the suballocation layer only") {
  Fixture f;
  Heap heap = f.make_heap();
  auto arena_r = Arena::create(heap, 4096);
  REQUIRE(arena_r.ok());
  Arena arena = std::move(arena_r).take();

  auto q = arena.malloc(64);
  REQUIRE(q.ok());
  const Capability sub = q.value();
  REQUIRE(f.mem.store(sub, sub.bounds.base, 8, {1, 2, 3, 4, 5, 6, 7, 8},
                      f.cfg).ok());
  REQUIRE(arena.free(sub).ok());

  // Dangling suballocation capability traps.
  auto uaf = f.mem.load(sub, sub.bounds.base, 8, f.cfg);
  REQUIRE(!uaf.ok());
  CHECK(uaf.error().kind == TrapKind::kUseAfterFree);

  // The arena capability (strictly wider bounds) still reads the region.
  auto via_arena =
      f.mem.load(arena.arena_cap(), sub.bounds.base, 8, f.cfg);
  CHECK(via_arena.ok());

  // So does the heap-level capability over the whole heap.
  auto via_heap = f.mem.load(heap.heap_cap(), sub.bounds.base, 8, f.cfg);
  CHECK(via_heap.ok());

  // Double free of the suballocation is detected.
  auto twice = arena.free(sub);
  REQUIRE(!twice.ok());
  CHECK(twice.error().kind == AllocErrorKind::kDoubleFree);
}

TEST_CASE("arena reuse detoxes through the arena capability") {
  Fixture f;
  Heap heap = f.make_heap();
  auto arena_r = Arena::create(heap, 1024);
  REQUIRE(arena_r.ok());
  Arena arena = std::move(arena_r).take();

  auto q = arena.malloc(64);
  REQUIRE(q.ok());
  const Bounds first_bounds = q.value().bounds;
  REQUIRE(arena.free(q.value()).ok());
  REQUIRE(arena.quarantine_flush(f.sweep()).ok());

  auto q2 = arena.malloc(64);
  REQUIRE(q2.ok());
  CHECK(q2.value().bounds == first_bounds);  // buddy reuses the block
  // Reused block was zeroed (detox), not left poisoned: reads return zero.
  auto loaded = f.mem.load(q2.value(), q2.value().bounds.base, 8, f.cfg);
  REQUIRE(loaded.ok());
  CHECK(loaded.value() == std::vector<std::uint8_t>(8, 0));
}

TEST_CASE("fresh arena blocks keep parent poison for initialisation safety") {
  Fixture f;
  Heap heap = f.make_heap();
  auto arena_r = Arena::create(heap, 1024);
  REQUIRE(arena_r.ok());
  Arena arena = std::move(arena_r).take();

  auto q = arena.malloc(32);
  REQUIRE(q.ok());
  // Never-written fresh suballocation: read-before-write traps.
  auto uninit = f.mem.load(q.value(), q.value().bounds.base, 8, f.cfg);
  REQUIRE(!uninit.ok());
  CHECK(uninit.error().kind == TrapKind::kUninitialisedRead);
  // Writes auto-zero and proceed.
  REQUIRE(f.mem.store(q.value(), q.value().bounds.base, 8,
                      {5, 5, 5, 5, 5, 5, 5, 5}, f.cfg).ok());
  auto loaded = f.mem.load(q.value(), q.value().bounds.base, 8, f.cfg);
  REQUIRE(loaded.ok());
}

TEST_CASE("arena on a baseline heap is refused") {
  Fixture f;
  ShadowBitmap bitmap(kHeapBounds);
  auto heap = Heap::create(f.mem, f.root, HeapConfig{kHeapBounds}, f.cfg,
                           &f.clock, HeapBackend::kShadow, &bitmap);
  REQUIRE(heap.ok());
  Heap shadow_heap = std::move(heap).take();
  auto arena = Arena::create(shadow_heap, 1024);
  REQUIRE(!arena.ok());
  CHECK(arena.error().kind == AllocErrorKind::kConfigError);
}

TEST_CASE("baseline heap: zero on free, paint bitmap, detect double free") {
  Fixture f;
  ShadowBitmap bitmap(kHeapBounds);
  auto heap_r = Heap::create(f.mem, f.root, HeapConfig{kHeapBounds}, f.cfg,
                             &f.clock, HeapBackend::kShadow, &bitmap);
  REQUIRE(heap_r.ok());
  Heap heap = std::move(heap_r).take();

  auto cap = heap.malloc(32);
  REQUIRE(cap.ok());
  const Addr base = cap.value().bounds.base;
  REQUIRE(f.mem.store(cap.value(), base, 8, {7, 7, 7, 7, 7, 7, 7, 7},
                      f.cfg).ok());
  REQUIRE(heap.free(cap.value()).ok());

  // Freed bytes are zeroed, the bitmap is painted, and the dangling
  // capability still reads them: the use-after-reallocation gap.
  CHECK(bitmap.is_painted(base).value());
  auto loaded = f.mem.load(cap.value(), base, 8, f.cfg);
  REQUIRE(loaded.ok());
  CHECK(loaded.value() == std::vector<std::uint8_t>(8, 0));

  auto twice = heap.free(cap.value());
  REQUIRE(!twice.ok());
  CHECK(twice.error().kind == AllocErrorKind::kDoubleFree);

  // Recycle clears the paint.
  RootSet roots;
  roots.memory_regions.push_back(Bounds{0, kMemBytes});
  const SweepToken token =
      sweep_shadow(f.mem, roots, bitmap, f.clock).token();
  REQUIRE(heap.quarantine_flush(token).ok());
  CHECK(!bitmap.is_painted(base).value());
}
