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

#ifndef POISONCAP_REVOKER_HPP
#define POISONCAP_REVOKER_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "poisoncap/alloc.hpp"
#include "poisoncap/memory.hpp"

namespace poisoncap {

/// Sweep roots: mutable register slots (the scenario's live handle table)
/// plus the memory ranges to scan for stored capabilities.
struct RootSet {
  std::vector<Capability*> register_caps;
  std::vector<Bounds> memory_regions;
};

struct SweepReport {
  std::uint64_t epoch = 0;
  std::uint64_t caps_examined = 0;
  std::uint64_t caps_revoked = 0;
  std::uint64_t words_probed = 0;
  std::uint64_t shadow_bytes = 0;
  SweepToken token() const { return SweepToken{epoch}; }
  bool operator==(const SweepReport&) const = default;
};

enum class SweepExec : std::uint8_t { kSerial, kParallel };

/// Reads the word at the base of `target` (aligned down to the granule)
/// through a privileged root and returns the poison capability found there,
/// if any. The re-derivation through the root keeps the probe trap-free.
Result<std::optional<PoisonWord>, Trap> probe_poison(
    const TaggedMemory& mem, const Capability& root_with_poison_perm,
    const Capability& target);

/// A capability dangles iff it points into poison of equal or greater
/// bounds with a matching version; privileged (poison-permission) holders
/// are exempt.
bool should_revoke(const Capability& target, const PoisonWord& poison);

/// Stop-the-world sweep without a shadow bitmap: every tagged capability in
/// the roots is probed for poison at its base; dangling ones lose their
/// tag in place. Poison words themselves are classified via the
/// capability-class probe and skipped as capability sources. The parallel
/// path marks in a first data-parallel pass and clears tags in a second,
/// so it is bit-identical to the serial reference.
SweepReport sweep_poison(TaggedMemory& mem, const RootSet& roots,
                         const Capability& privileged_root, SweepClock& clock,
                         SweepExec exec = SweepExec::kSerial);

// ---------------------------------------------------------------------------
// Cornucopia-style baseline

/// One bit per 16-byte heap word; painted on free, cleared on recycle.
class ShadowBitmap {
 public:
  explicit ShadowBitmap(const Bounds& covered);

  const Bounds& covered() const { return covered_; }
  std::uint64_t size_bytes() const { return covered_.length / 128; }

  Result<Unit, Trap> paint(const Bounds& bounds);
  Result<Unit, Trap> clear(const Bounds& bounds);
  Result<bool, Trap> is_painted(Addr addr) const;

  /// Range form of the coverage check used by the sweep: addresses outside
  /// coverage are simply unpainted.
  bool painted_or_outside(Addr addr) const;

 private:
  Bounds covered_;
  std::vector<std::uint64_t> bits_;
};

/// Baseline sweep: a tagged capability is revoked iff the shadow bit at its
/// (aligned-down) base is painted.
SweepReport sweep_shadow(TaggedMemory& mem, const RootSet& roots,
                         const ShadowBitmap& bitmap, SweepClock& clock,
                         SweepExec exec = SweepExec::kSerial);

}  // namespace poisoncap

#endif  // POISONCAP_REVOKER_HPP
