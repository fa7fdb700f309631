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

#include "poisoncap/revoker.hpp"

#include <cassert>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace poisoncap {

Result<std::optional<PoisonWord>, Trap> probe_poison(
    const TaggedMemory& mem, const Capability& root_with_poison_perm,
    const Capability& target) {
  const Addr probe_addr = align_down_word(target.bounds.base);
  if (!root_with_poison_perm.tag) return Trap{TrapKind::kTagViolation};
  if (!root_with_poison_perm.perms.has(Perm::kPoison) ||
      !root_with_poison_perm.bounds.contains(probe_addr, kWordBytes) ||
      probe_addr + kWordBytes > mem.size()) {
    return Trap{TrapKind::kBoundsViolation};
  }
  // Re-derivation through the privileged root keeps the probe trap-free;
  // the poison-permission rule admits the read unconditionally.
  DecodedWord word = mem.decode_at(probe_addr);
  if (const auto* p = std::get_if<PoisonWord>(&word)) {
    return std::optional<PoisonWord>(*p);
  }
  return std::optional<PoisonWord>(std::nullopt);
}

bool should_revoke(const Capability& target, const PoisonWord& poison) {
  return target.tag && !target.perms.has(Perm::kPoison) &&
         bounds_contains(poison.bounds, target.bounds) &&
         (target.version & 1) == (poison.version & 1);
}

namespace {

// Decides whether the tagged capability word at `addr` must be revoked and
// bumps the probe/examination counters. Read-only; both sweep executors
// share it.
struct ScanCounters {
  std::uint64_t examined = 0;
  std::uint64_t probed = 0;
  std::uint64_t revoked = 0;
};

template <typename RevokePredicate>
bool scan_word(const TaggedMemory& mem, Addr addr, ScanCounters& c,
               const RevokePredicate& dangling) {
  const WordImage& image = mem.word_at(addr);
  if (!image.tag) return false;
  // Poison capabilities are treated as non-capability data by the sweep:
  // they are not capability sources and are never revoked.
  if (image.raw[15] & 0x1) return false;
  const auto cap = std::get<Capability>(decode(image));
  ++c.examined;
  ++c.probed;
  if (dangling(cap)) {
    ++c.revoked;
    return true;
  }
  return false;
}

/// Shared sweep skeleton: visits register roots serially, then the memory
/// regions with the selected executor. The parallel executor marks in a
/// read-only pass and clears tags afterwards, so its outcome and counters
/// are identical to the serial reference.
template <typename RevokePredicate>
SweepReport run_sweep(TaggedMemory& mem, const RootSet& roots,
                      SweepClock& clock, SweepExec exec,
                      const RevokePredicate& dangling) {
  SweepReport report;

  for (Capability* slot : roots.register_caps) {
    if (slot == nullptr || !slot->tag) continue;
    ++report.caps_examined;
    ++report.words_probed;
    if (dangling(*slot)) {
      slot->tag = false;
      ++report.caps_revoked;
    }
  }

  for (const Bounds& region : roots.memory_regions) {
    const Addr first = align_down_word(region.base);
    const std::uint64_t nwords =
        (region.limit() - first + kWordBytes - 1) / kWordBytes;
    std::vector<std::uint8_t> marks(nwords, 0);
    std::uint64_t examined = 0;
    std::uint64_t probed = 0;
    std::uint64_t revoked = 0;

    if (exec == SweepExec::kParallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) \
    reduction(+ : examined, probed, revoked)
#endif
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(nwords); ++i) {
        ScanCounters c;
        if (scan_word(mem, first + static_cast<Addr>(i) * kWordBytes, c,
                      dangling)) {
          marks[static_cast<std::uint64_t>(i)] = 1;
        }
        examined += c.examined;
        probed += c.probed;
        revoked += c.revoked;
      }
    } else {
      for (std::uint64_t i = 0; i < nwords; ++i) {
        ScanCounters c;
        if (scan_word(mem, first + i * kWordBytes, c, dangling)) {
          marks[i] = 1;
        }
        examined += c.examined;
        probed += c.probed;
        revoked += c.revoked;
      }
    }

    for (std::uint64_t i = 0; i < nwords; ++i) {
      if (marks[i]) mem.revoke_tag(first + i * kWordBytes);
    }
    report.caps_examined += examined;
    report.words_probed += probed;
    report.caps_revoked += revoked;
  }

  report.epoch = clock.advance();
  return report;
}

}  // namespace

SweepReport sweep_poison(TaggedMemory& mem, const RootSet& roots,
                         const Capability& privileged_root, SweepClock& clock,
                         SweepExec exec) {
  auto dangling = [&mem, &privileged_root](const Capability& cap) {
    auto probe = probe_poison(mem, privileged_root, cap);
    if (!probe.ok() || !probe.value().has_value()) return false;
    return should_revoke(cap, *probe.value());
  };
  SweepReport report = run_sweep(mem, roots, clock, exec, dangling);
  report.shadow_bytes = 0;
  return report;
}

// ---------------------------------------------------------------------------
// Shadow bitmap baseline

ShadowBitmap::ShadowBitmap(const Bounds& covered) : covered_(covered) {
  assert(covered.word_aligned());
  bits_.resize((covered.length / kWordBytes + 63) / 64, 0);
}

Result<Unit, Trap> ShadowBitmap::paint(const Bounds& bounds) {
  if (!bounds_contains(covered_, bounds)) {
    return Trap{TrapKind::kBoundsViolation};
  }
  for (Addr a = bounds.base; a < bounds.limit(); a += kWordBytes) {
    const std::uint64_t w = (a - covered_.base) / kWordBytes;
    bits_[w / 64] |= std::uint64_t{1} << (w % 64);
  }
  return Unit{};
}

Result<Unit, Trap> ShadowBitmap::clear(const Bounds& bounds) {
  if (!bounds_contains(covered_, bounds)) {
    return Trap{TrapKind::kBoundsViolation};
  }
  for (Addr a = bounds.base; a < bounds.limit(); a += kWordBytes) {
    const std::uint64_t w = (a - covered_.base) / kWordBytes;
    bits_[w / 64] &= ~(std::uint64_t{1} << (w % 64));
  }
  return Unit{};
}

Result<bool, Trap> ShadowBitmap::is_painted(Addr addr) const {
  const Addr a = align_down_word(addr);
  if (!covered_.contains(a, kWordBytes)) {
    return Trap{TrapKind::kBoundsViolation};
  }
  const std::uint64_t w = (a - covered_.base) / kWordBytes;
  return (bits_[w / 64] >> (w % 64) & 1) != 0;
}

bool ShadowBitmap::painted_or_outside(Addr addr) const {
  auto painted = is_painted(addr);
  return painted.ok() && painted.value();
}

SweepReport sweep_shadow(TaggedMemory& mem, const RootSet& roots,
                         const ShadowBitmap& bitmap, SweepClock& clock,
                         SweepExec exec) {
  auto dangling = [&bitmap](const Capability& cap) {
    return cap.tag && !cap.perms.has(Perm::kPoison) &&
           bitmap.painted_or_outside(cap.bounds.base);
  };
  SweepReport report = run_sweep(mem, roots, clock, exec, dangling);
  report.shadow_bytes = bitmap.size_bytes();
  return report;
}

}  // namespace poisoncap
