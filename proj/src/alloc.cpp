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

#include "poisoncap/alloc.hpp"

#include <bit>
#include <cassert>

#include "poisoncap/revoker.hpp"

namespace poisoncap {

std::string to_string(AllocErrorKind k) {
  switch (k) {
    case AllocErrorKind::kOutOfMemory: return "OutOfMemory";
    case AllocErrorKind::kDoubleFree: return "DoubleFree";
    case AllocErrorKind::kInvalidFree: return "InvalidFree";
    case AllocErrorKind::kStaleSweep: return "StaleSweep";
    case AllocErrorKind::kConfigError: return "ConfigError";
    case AllocErrorKind::kPermissionViolation: return "PermissionViolation";
    case AllocErrorKind::kMonotonicityViolation: return "MonotonicityViolation";
    case AllocErrorKind::kInternal: return "Internal";
  }
  return "?";
}

std::uint64_t round_up_pow2_block(std::uint64_t size) {
  if (size <= kWordBytes) return kWordBytes;
  return std::bit_ceil(size);
}

// ---------------------------------------------------------------------------
// Heap

Heap::Heap(TaggedMemory& mem, Capability root, Capability heap_cap,
           const HeapConfig& cfg, const SemanticsConfig& semantics,
           const SweepClock* clock, HeapBackend backend, ShadowBitmap* bitmap)
    : mem_(&mem),
      root_(root),
      heap_cap_(heap_cap),
      cfg_(cfg),
      semantics_(semantics),
      clock_(clock),
      backend_(backend),
      bitmap_(bitmap),
      fresh_cursor_(cfg.heap_bounds.base) {}

Result<Heap, AllocError> Heap::create(TaggedMemory& mem, Capability root,
                                      const HeapConfig& cfg,
                                      const SemanticsConfig& semantics,
                                      const SweepClock* clock,
                                      HeapBackend backend,
                                      ShadowBitmap* bitmap) {
  if (cfg.quarantine_threshold_pct <= 0.0 ||
      cfg.quarantine_threshold_pct > 100.0) {
    return AllocError{AllocErrorKind::kConfigError, {}};
  }
  if (!cfg.heap_bounds.word_aligned() || cfg.heap_bounds.length == 0 ||
      !cfg.heap_bounds.valid()) {
    return AllocError{AllocErrorKind::kConfigError, {}};
  }
  if (!root.tag || !PermSet::user().subset_of(root.perms)) {
    return AllocError{AllocErrorKind::kPermissionViolation, {}};
  }
  if (!bounds_contains(root.bounds, cfg.heap_bounds)) {
    return AllocError{AllocErrorKind::kMonotonicityViolation, {}};
  }
  if (backend == HeapBackend::kShadow &&
      (bitmap == nullptr ||
       !bounds_contains(bitmap->covered(), cfg.heap_bounds))) {
    return AllocError{AllocErrorKind::kConfigError, {}};
  }
  auto heap_cap = set_bounds(root, cfg.heap_bounds);
  assert(heap_cap.ok());
  auto narrowed = clear_perm(heap_cap.value(), Perm::kPoison);
  assert(narrowed.ok());
  return Heap(mem, root, narrowed.value(), cfg, semantics, clock, backend,
              bitmap);
}

Result<Capability, AllocError> Heap::mint_user_cap(const Bounds& bounds,
                                                   std::uint8_t version) {
  auto derived = set_bounds(root_, bounds);
  if (!derived.ok()) return AllocError{AllocErrorKind::kInternal, {}};
  Capability cap = derived.value();
  if (cap.perms.has(Perm::kPoison)) {
    auto versioned = set_version(cap, version);
    assert(versioned.ok());
    cap = versioned.value();
  } else {
    // The version update is a privileged service; a root without the
    // poison permission stands in for an allocator backed by one.
    cap.version = version & 1;
  }
  cap.perms = PermSet{static_cast<std::uint8_t>(cap.perms.mask &
                                                PermSet::user().mask)};
  return cap;
}

std::optional<PoisonWord> Heap::read_poison_at(Addr addr) const {
  auto image = mem_->load_cap(root_, align_down_word(addr), semantics_);
  DecodedWord word = image.ok()
                         ? decode(image.value())
                         : mem_->decode_at(align_down_word(addr));
  if (const auto* p = std::get_if<PoisonWord>(&word)) return *p;
  return std::nullopt;
}

Result<Unit, AllocError> Heap::detox_region(const Bounds& bounds) {
  const std::vector<std::uint8_t> zeros(kWordBytes, 0);
  for (Addr a = bounds.base; a < bounds.limit(); a += kWordBytes) {
    auto via_heap = mem_->store(heap_cap_, a, kWordBytes, zeros, semantics_);
    if (via_heap.ok() &&
        via_heap.value() == TaggedMemory::StoreOutcome::kStored) {
      continue;
    }
    auto via_root = mem_->store(root_, a, kWordBytes, zeros, semantics_);
    if (!via_root.ok() ||
        via_root.value() != TaggedMemory::StoreOutcome::kStored) {
      return AllocError{AllocErrorKind::kInternal, {}};
    }
  }
  return Unit{};
}

Result<Unit, AllocError> Heap::zero_region(const Bounds& bounds) {
  return detox_region(bounds);
}

void Heap::maybe_request_revocation() {
  const double threshold =
      cfg_.quarantine_threshold_pct / 100.0 * cfg_.heap_bounds.length;
  if (!revocation_requested_ &&
      static_cast<double>(stats_.quarantine_bytes) >= threshold) {
    revocation_requested_ = true;
    ++stats_.sweeps_triggered;
  }
}

Result<Capability, AllocError> Heap::malloc(std::uint64_t size) {
  if (size == 0) return AllocError{AllocErrorKind::kConfigError, {}};
  const std::uint64_t len = round_up_granule(size);

  Addr base = 0;
  bool fresh = false;
  bool found = false;
  // First fit over recycled regions, splitting any surplus.
  for (auto& [rbase, region] : regions_) {
    if (region.state != RegionState::kRecycled || region.length < len) {
      continue;
    }
    base = rbase;
    if (region.length > len) {
      regions_[rbase + len] =
          Region{region.length - len, RegionState::kRecycled, region.version};
      region.length = len;
    }
    found = true;
    break;
  }
  if (!found) {
    if (fresh_cursor_ + len > cfg_.heap_bounds.limit()) {
      return AllocError{AllocErrorKind::kOutOfMemory, {}};
    }
    base = fresh_cursor_;
    fresh_cursor_ += len;
    regions_[base] = Region{len, RegionState::kRecycled,
                            cfg_.fresh_poison_version};
    fresh = true;
  }

  Region& region = regions_[base];
  const Bounds bounds{base, len};
  std::uint8_t new_version = region.version;

  if (backend_ == HeapBackend::kPoison) {
    if (fresh) {
      // Carve-out: paint the never-used region with fresh-version poison
      // through a temporary capability of exactly the allocation bounds.
      auto temp = mint_user_cap(bounds, cfg_.fresh_poison_version);
      if (!temp.ok()) return temp.error();
      auto painted = mem_->cpoison(temp.value(), base, len / kWordBytes,
                                   semantics_);
      if (!painted.ok()) {
        return AllocError{AllocErrorKind::kInternal, painted.error().kind};
      }
    } else {
      ++stats_.version_flips;
    }
    new_version = (region.version ^ 1) & 1;
    if (cfg_.realloc_policy == ReallocPolicy::kEagerZero) {
      auto detoxed = detox_region(bounds);
      if (!detoxed.ok()) return detoxed.error();
    }
  } else {
    // Baseline: versions never change; memory was zeroed on free.
    new_version = root_.version;
  }

  region.state = RegionState::kLive;
  region.version = new_version;
  stats_.live_bytes += len;
  return mint_user_cap(bounds, new_version);
}

Result<Unit, AllocError> Heap::free(const Capability& cap) {
  if (!cap.tag) return AllocError{AllocErrorKind::kInvalidFree, {}};
  const Addr base = cap.bounds.base;

  if (backend_ == HeapBackend::kPoison) {
    auto probe = mem_->cgetpoison(cap, base);
    if (!probe.ok()) return AllocError{AllocErrorKind::kInvalidFree, {}};
    if (probe.value()) {
      // Poison at the base is a double free only when it records this
      // very allocation: same bounds and same version. Stale poison of
      // the opposite generation is normal for a never-written lazy
      // allocation and does not block the free.
      auto poison = read_poison_at(base);
      if (poison && poison->bounds == cap.bounds &&
          (poison->version & 1) == (cap.version & 1)) {
        ++stats_.double_frees;
        return AllocError{AllocErrorKind::kDoubleFree, {}};
      }
    }
  } else {
    if (bitmap_->painted_or_outside(base)) {
      ++stats_.double_frees;
      return AllocError{AllocErrorKind::kDoubleFree, {}};
    }
  }

  auto it = regions_.find(base);
  if (it == regions_.end() || it->second.state != RegionState::kLive ||
      it->second.length != cap.bounds.length ||
      (it->second.version & 1) != (cap.version & 1)) {
    return AllocError{AllocErrorKind::kInvalidFree, {}};
  }

  if (backend_ == HeapBackend::kPoison) {
    auto painted =
        mem_->cpoison(cap, base, cap.bounds.length / kWordBytes, semantics_);
    if (!painted.ok()) {
      return AllocError{AllocErrorKind::kInternal, painted.error().kind};
    }
    if (painted.value() == TaggedMemory::StoreOutcome::kCancelled) {
      return AllocError{AllocErrorKind::kInternal, {}};
    }
  } else {
    // Cornucopia with zeroing: clear the freed bytes, then paint the
    // shadow bitmap.
    auto zeroed = zero_region(cap.bounds);
    if (!zeroed.ok()) return zeroed.error();
    auto painted = bitmap_->paint(cap.bounds);
    if (!painted.ok()) return AllocError{AllocErrorKind::kInternal, {}};
  }

  it->second.state = RegionState::kQuarantined;
  stats_.live_bytes -= it->second.length;
  stats_.quarantine_bytes += it->second.length;
  last_free_epoch_ = clock_ != nullptr ? clock_->completed() : 0;
  maybe_request_revocation();
  return Unit{};
}

Result<std::uint64_t, AllocError> Heap::quarantine_flush(SweepToken token) {
  if (token.epoch <= last_free_epoch_ ||
      (clock_ != nullptr && token.epoch > clock_->completed())) {
    return AllocError{AllocErrorKind::kStaleSweep, {}};
  }
  std::uint64_t recycled = 0;
  for (auto& [base, region] : regions_) {
    if (region.state != RegionState::kQuarantined) continue;
    region.state = RegionState::kRecycled;
    recycled += region.length;
    if (backend_ == HeapBackend::kShadow) {
      auto cleared = bitmap_->clear(Bounds{base, region.length});
      if (!cleared.ok()) return AllocError{AllocErrorKind::kInternal, {}};
    }
  }
  stats_.quarantine_bytes -= recycled;
  return recycled;
}

bool Heap::is_live(const Bounds& b) const {
  auto it = regions_.find(b.base);
  return it != regions_.end() && it->second.state == RegionState::kLive &&
         it->second.length == b.length;
}

// ---------------------------------------------------------------------------
// Arena

Arena::Arena(Heap& parent, Capability arena_cap, double threshold_pct)
    : parent_(&parent),
      mem_(&parent.memory()),
      arena_cap_(arena_cap),
      semantics_(SemanticsConfig::strict()),
      clock_(nullptr),
      threshold_pct_(threshold_pct),
      arena_order_(0),
      max_order_(0) {}

Result<Arena, AllocError> Arena::create(Heap& parent, std::uint64_t size,
                                        double quarantine_threshold_pct) {
  if (parent.backend() != HeapBackend::kPoison) {
    // The bitmap baseline has no notion of allocation layers.
    return AllocError{AllocErrorKind::kConfigError, {}};
  }
  if (quarantine_threshold_pct <= 0.0 || quarantine_threshold_pct > 100.0) {
    return AllocError{AllocErrorKind::kConfigError, {}};
  }
  const std::uint64_t arena_len = round_up_pow2_block(size);
  if (arena_len < 2 * kWordBytes) {
    return AllocError{AllocErrorKind::kConfigError, {}};
  }
  auto slab = parent.malloc(arena_len);
  if (!slab.ok()) return slab.error();

  Arena arena(parent, slab.value(), quarantine_threshold_pct);
  arena.semantics_ = parent.semantics();
  arena.clock_ = parent.clock();
  arena.arena_order_ =
      static_cast<unsigned>(std::countr_zero(arena_len / kWordBytes));
  arena.max_order_ = arena.arena_order_ - 1;
  arena.blocks_[slab.value().bounds.base] =
      Block{arena.arena_order_, Block::State::kFree, false};
  return arena;
}

std::optional<Addr> Arena::take_free_block(unsigned order) {
  // Smallest adequate order, lowest address first; split down to size.
  unsigned best_order = arena_order_ + 1;
  Addr best_base = 0;
  for (const auto& [base, block] : blocks_) {
    if (block.state != Block::State::kFree || block.order < order) continue;
    if (block.order < best_order) {
      best_order = block.order;
      best_base = base;
    }
  }
  if (best_order > arena_order_) return std::nullopt;
  Addr base = best_base;
  bool dirty = blocks_[base].dirty;
  blocks_.erase(base);
  for (unsigned o = best_order; o > order; --o) {
    const Addr upper = base + block_len(o - 1);
    blocks_[upper] = Block{o - 1, Block::State::kFree, dirty};
  }
  blocks_[base] = Block{order, Block::State::kLive, dirty};
  return base;
}

void Arena::insert_and_merge(Addr base, unsigned order, bool dirty) {
  const Addr arena_base = arena_cap_.bounds.base;
  while (order < arena_order_) {
    const Addr buddy = arena_base + ((base - arena_base) ^ block_len(order));
    auto it = blocks_.find(buddy);
    if (it == blocks_.end() || it->second.state != Block::State::kFree ||
        it->second.order != order) {
      break;
    }
    dirty = dirty || it->second.dirty;
    blocks_.erase(it);
    blocks_.erase(base);
    base = std::min(base, buddy);
    ++order;
  }
  blocks_[base] = Block{order, Block::State::kFree, dirty};
}

Result<Unit, AllocError> Arena::detox_block(const Bounds& bounds) {
  // Writing zeros through the arena capability detoxes arena-layer poison
  // (broader bounds) and auto-zeros parent-layer poison (different
  // version); neither path can trap.
  const std::vector<std::uint8_t> zeros(kWordBytes, 0);
  for (Addr a = bounds.base; a < bounds.limit(); a += kWordBytes) {
    auto stored = mem_->store(arena_cap_, a, kWordBytes, zeros, semantics_);
    if (!stored.ok() ||
        stored.value() != TaggedMemory::StoreOutcome::kStored) {
      return AllocError{AllocErrorKind::kInternal,
                        stored.ok() ? std::nullopt
                                    : std::optional(stored.error().kind)};
    }
  }
  return Unit{};
}

Result<Capability, AllocError> Arena::malloc(std::uint64_t size) {
  if (size == 0) return AllocError{AllocErrorKind::kConfigError, {}};
  const std::uint64_t len = round_up_pow2_block(size);
  const unsigned order =
      static_cast<unsigned>(std::countr_zero(len / kWordBytes));
  if (order > max_order_) return AllocError{AllocErrorKind::kOutOfMemory, {}};

  auto base = take_free_block(order);
  if (!base) return AllocError{AllocErrorKind::kOutOfMemory, {}};

  const Bounds bounds{*base, len};
  if (blocks_[*base].dirty) {
    auto detoxed = detox_block(bounds);
    if (!detoxed.ok()) return detoxed.error();
  }
  auto cap = set_bounds(arena_cap_, bounds);
  if (!cap.ok()) return AllocError{AllocErrorKind::kInternal, {}};
  stats_.live_bytes += len;
  return cap.value();
}

Result<Unit, AllocError> Arena::free(const Capability& cap) {
  if (!cap.tag) return AllocError{AllocErrorKind::kInvalidFree, {}};
  const Addr base = cap.bounds.base;

  auto probe = mem_->cgetpoison(cap, base);
  if (!probe.ok()) return AllocError{AllocErrorKind::kInvalidFree, {}};
  if (probe.value()) {
    // The arena capability's strictly wider bounds authorise reading
    // arena-layer poison to compare the recorded identity. Parent-layer
    // poison (a never-written fresh block) is not readable this way and
    // is not a double free.
    auto image = mem_->load_cap(arena_cap_, base, semantics_);
    if (image.ok()) {
      DecodedWord word = decode(image.value());
      if (const auto* p = std::get_if<PoisonWord>(&word)) {
        if (p->bounds == cap.bounds &&
            (p->version & 1) == (cap.version & 1)) {
          ++stats_.double_frees;
          return AllocError{AllocErrorKind::kDoubleFree, {}};
        }
      }
    }
  }

  auto it = blocks_.find(base);
  if (it == blocks_.end() || it->second.state != Block::State::kLive ||
      block_len(it->second.order) != cap.bounds.length) {
    return AllocError{AllocErrorKind::kInvalidFree, {}};
  }

  auto painted =
      mem_->cpoison(cap, base, cap.bounds.length / kWordBytes, semantics_);
  if (!painted.ok()) {
    return AllocError{AllocErrorKind::kInternal, painted.error().kind};
  }
  if (painted.value() == TaggedMemory::StoreOutcome::kCancelled) {
    return AllocError{AllocErrorKind::kInternal, {}};
  }

  it->second.state = Block::State::kQuarantined;
  it->second.dirty = true;
  stats_.live_bytes -= cap.bounds.length;
  stats_.quarantine_bytes += cap.bounds.length;
  last_free_epoch_ = clock_ != nullptr ? clock_->completed() : 0;
  const double threshold =
      threshold_pct_ / 100.0 * arena_cap_.bounds.length;
  if (!revocation_requested_ &&
      static_cast<double>(stats_.quarantine_bytes) >= threshold) {
    revocation_requested_ = true;
    ++stats_.sweeps_triggered;
  }
  return Unit{};
}

Result<std::uint64_t, AllocError> Arena::quarantine_flush(SweepToken token) {
  if (token.epoch <= last_free_epoch_ ||
      (clock_ != nullptr && token.epoch > clock_->completed())) {
    return AllocError{AllocErrorKind::kStaleSweep, {}};
  }
  std::uint64_t recycled = 0;
  std::vector<std::pair<Addr, unsigned>> freed;
  for (auto& [base, block] : blocks_) {
    if (block.state != Block::State::kQuarantined) continue;
    freed.emplace_back(base, block.order);
    recycled += block_len(block.order);
  }
  for (const auto& [base, order] : freed) {
    blocks_[base].state = Block::State::kFree;
    insert_and_merge(base, order, /*dirty=*/true);
  }
  stats_.quarantine_bytes -= recycled;
  return recycled;
}

}  // namespace poisoncap
