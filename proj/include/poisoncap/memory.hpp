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

#ifndef POISONCAP_MEMORY_HPP
#define POISONCAP_MEMORY_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "poisoncap/cap.hpp"
#include "poisoncap/result.hpp"

namespace poisoncap {

// ---------------------------------------------------------------------------
// Access semantics

enum class AccessKind : std::uint8_t { kRead, kWrite };

enum class TrapKind : std::uint8_t {
  kUseAfterFree,
  kUninitialisedRead,
  kBoundsViolation,
  kPermissionViolation,
  kTagViolation,
};

std::string to_string(TrapKind k);

struct Trap {
  TrapKind kind;
  bool operator==(const Trap&) const = default;
};

/// Configurable halves of the semantics: loads to poisoned memory either
/// trap precisely or return zero; stores either trap or are cancelled
/// without delaying commit; reads of version-mismatched (uninitialised)
/// words either trap or read as zero.
struct SemanticsConfig {
  enum class UafLoad : std::uint8_t { kTrap, kSilentZero };
  enum class UafStore : std::uint8_t { kTrap, kCancel };
  enum class UninitRead : std::uint8_t { kTrap, kZero };

  UafLoad uaf_load = UafLoad::kTrap;
  UafStore uaf_store = UafStore::kTrap;
  UninitRead uninit_read = UninitRead::kTrap;

  /// All violations trap precisely.
  static constexpr SemanticsConfig strict() { return {}; }
  /// Stores to poison are cancelled instead of trapping.
  static constexpr SemanticsConfig hardware() {
    return {UafLoad::kTrap, UafStore::kCancel, UninitRead::kTrap};
  }
  /// Silent mode: zero on use-after-free load, zero on uninitialised read.
  static constexpr SemanticsConfig legacy() {
    return {UafLoad::kSilentZero, UafStore::kCancel, UninitRead::kZero};
  }
  bool operator==(const SemanticsConfig&) const = default;
};

/// Outcome of the access matrix. For writes, kAllowAutoZero means the word
/// is zero-filled before the written bytes land; for reads it means the
/// access proceeds but yields zeros (silent-zero and zero-init modes).
struct AccessDecision {
  enum class Kind : std::uint8_t { kAllow, kAllowAutoZero, kCancel, kTrap };

  Kind kind = Kind::kAllow;
  TrapKind trap_kind = TrapKind::kUseAfterFree;  // valid iff kind == kTrap

  static constexpr AccessDecision allow() { return {Kind::kAllow, {}}; }
  static constexpr AccessDecision allow_auto_zero() {
    return {Kind::kAllowAutoZero, {}};
  }
  static constexpr AccessDecision cancel() { return {Kind::kCancel, {}}; }
  static constexpr AccessDecision trap(TrapKind k) {
    return {Kind::kTrap, k};
  }

  bool is_trap() const { return kind == Kind::kTrap; }
  bool operator==(const AccessDecision&) const = default;
};

std::string to_string(const AccessDecision& d);

/// Identifies one row of the poison-access truth table:
/// POISON-privilege x bounds relation x version equality x access kind.
/// 32 rows total; the exhaustive oracle and corpus coverage both index it.
constexpr int poison_rule_row(bool has_poison_perm, BoundsRel rel,
                              bool version_equal, AccessKind kind) {
  return (has_poison_perm ? 16 : 0) | (static_cast<int>(rel) << 2) |
         (version_equal ? 2 : 0) | (kind == AccessKind::kWrite ? 1 : 0);
}
inline constexpr int kPoisonRuleRows = 32;

/// The complete access-decision matrix, evaluated in priority order:
/// tag, then bounds (including word-straddle and alignment), then
/// READ/WRITE permission, then word contents. Raw data and capability
/// words allow; a poison word is governed by privilege, bounds hierarchy,
/// and finally version comparison. Pure and total.
AccessDecision check_access(const Capability& cap, Addr addr, unsigned width,
                            AccessKind kind, const DecodedWord& word,
                            const SemanticsConfig& cfg);

// ---------------------------------------------------------------------------
// Tagged memory

/// Fired once per architectural word access; lets an external model (the
/// cache simulator) observe committed traffic. `poison_after` reports
/// whether the touched word holds a poison capability once the operation
/// has completed.
struct MemoryEvent {
  Addr addr = 0;
  unsigned width = 0;
  AccessKind kind = AccessKind::kRead;
  bool poison_after = false;
};

using MemoryObserver = std::function<void(const MemoryEvent&)>;

/// Records which truth-table rows were exercised; attached by the harness
/// for corpus-coverage accounting.
struct DecisionRecorder {
  std::array<std::uint32_t, kPoisonRuleRows> row_hits{};
  void record(int row) { ++row_hits[row]; }
};

class TaggedMemory {
 public:
  /// Size must be a multiple of the 16-byte word granule.
  explicit TaggedMemory(std::uint64_t size_bytes);

  std::uint64_t size() const { return words_.size() * kWordBytes; }
  std::uint64_t word_count() const { return words_.size(); }

  // -- architectural operations ------------------------------------------

  /// Data load of `width` in {1,2,4,8,16}; may not straddle a word.
  Result<std::vector<std::uint8_t>, Trap> load(const Capability& cap,
                                               Addr addr, unsigned width,
                                               const SemanticsConfig& cfg);

  enum class StoreOutcome : std::uint8_t { kStored, kCancelled };
  Result<StoreOutcome, Trap> store(const Capability& cap, Addr addr,
                                   unsigned width,
                                   const std::vector<std::uint8_t>& bytes,
                                   const SemanticsConfig& cfg);

  /// Capability-wide load; returns the full word image (tag preserved for
  /// privileged and upstream-allocator reads of poison).
  Result<WordImage, Trap> load_cap(const Capability& cap, Addr addr,
                                   const SemanticsConfig& cfg);

  Result<StoreOutcome, Trap> store_cap(const Capability& cap, Addr addr,
                                       const Capability& value,
                                       const SemanticsConfig& cfg);

  /// Paints `nwords` words with poison carrying the dereferenced
  /// capability's bounds and version. All-or-nothing: the first word whose
  /// write decision is a trap or cancel aborts before any mutation.
  Result<StoreOutcome, Trap> cpoison(const Capability& cap, Addr addr,
                                     std::uint64_t nwords,
                                     const SemanticsConfig& cfg);

  /// True iff the word at `addr` holds a poison capability. Never traps on
  /// poison; bounds and tag checks still apply.
  Result<bool, Trap> cgetpoison(const Capability& cap, Addr addr);

  enum class CapClass : std::uint8_t { kNotCap, kCap, kPoisonCap };
  Result<CapClass, Trap> cgetcappoison(const Capability& cap, Addr addr);

  // -- model-privileged operations (revoker / test scaffolding) -----------

  const WordImage& word_at(Addr addr) const;
  DecodedWord decode_at(Addr addr) const;
  /// Clears the tag of the word containing `addr` (revocation).
  void revoke_tag(Addr addr);
  /// Installs a word image directly (genesis state, golden tests).
  void poke_word(Addr addr, const WordImage& image);

  std::uint64_t cancelled_stores() const { return cancelled_stores_; }

  void set_observer(MemoryObserver obs) { observer_ = std::move(obs); }
  void set_recorder(DecisionRecorder* rec) { recorder_ = rec; }

  /// Dump line per word: index, hex image, tag, decoded kind.
  std::string dump_word(std::uint64_t word_index) const;
  std::string dump(Addr from, Addr to) const;

 private:
  AccessDecision decide(const Capability& cap, Addr addr, unsigned width,
                        AccessKind kind, PermSet needed,
                        const DecodedWord& word, const SemanticsConfig& cfg);
  void emit(Addr addr, unsigned width, AccessKind kind);

  std::vector<WordImage> words_;
  std::uint64_t cancelled_stores_ = 0;
  MemoryObserver observer_;
  DecisionRecorder* recorder_ = nullptr;
};

}  // namespace poisoncap

#endif  // POISONCAP_MEMORY_HPP
