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

#include "poisoncap/memory.hpp"

#include <algorithm>
#include <cassert>
#include <cstdio>

namespace poisoncap {

namespace {

bool valid_width(unsigned width) {
  return width == 1 || width == 2 || width == 4 || width == 8 || width == 16;
}

bool straddles_word(Addr addr, unsigned width) {
  return (addr & (kWordBytes - 1)) + width > kWordBytes;
}

}  // namespace

std::string to_string(TrapKind k) {
  switch (k) {
    case TrapKind::kUseAfterFree: return "UseAfterFree";
    case TrapKind::kUninitialisedRead: return "UninitialisedRead";
    case TrapKind::kBoundsViolation: return "BoundsViolation";
    case TrapKind::kPermissionViolation: return "PermissionViolation";
    case TrapKind::kTagViolation: return "TagViolation";
  }
  return "?";
}

std::string to_string(const AccessDecision& d) {
  switch (d.kind) {
    case AccessDecision::Kind::kAllow: return "Allow";
    case AccessDecision::Kind::kAllowAutoZero: return "AllowAutoZero";
    case AccessDecision::Kind::kCancel: return "Cancel";
    case AccessDecision::Kind::kTrap: return "Trap(" + to_string(d.trap_kind) + ")";
  }
  return "?";
}

// The canonical matrix. Priority: privilege, then the bounds hierarchy
// (only a strict superset marks an upstream allocator; equal bounds are the
// same layer and are denied), then version comparison. A matching version
// means the reference dangles into its own freed allocation; a differing
// version means the memory was freed by a predecessor generation and the
// access is governed by initialisation safety.
static AccessDecision decide_poison(const Capability& cap,
                                    const PoisonWord& poison,
                                    AccessKind kind,
                                    const SemanticsConfig& cfg) {
  if (cap.perms.has(Perm::kPoison)) return AccessDecision::allow();
  if (bounds_strictly_contains(cap.bounds, poison.bounds)) {
    return AccessDecision::allow();
  }
  if ((cap.version & 1) == (poison.version & 1)) {
    if (kind == AccessKind::kRead) {
      return cfg.uaf_load == SemanticsConfig::UafLoad::kTrap
                 ? AccessDecision::trap(TrapKind::kUseAfterFree)
                 : AccessDecision::allow_auto_zero();
    }
    return cfg.uaf_store == SemanticsConfig::UafStore::kTrap
               ? AccessDecision::trap(TrapKind::kUseAfterFree)
               : AccessDecision::cancel();
  }
  if (kind == AccessKind::kRead) {
    return cfg.uninit_read == SemanticsConfig::UninitRead::kTrap
               ? AccessDecision::trap(TrapKind::kUninitialisedRead)
               : AccessDecision::allow_auto_zero();
  }
  return AccessDecision::allow_auto_zero();
}

static AccessDecision decide_access(const Capability& cap, Addr addr,
                                    unsigned width, AccessKind kind,
                                    PermSet needed, const DecodedWord& word,
                                    const SemanticsConfig& cfg,
                                    DecisionRecorder* recorder) {
  if (!cap.tag) return AccessDecision::trap(TrapKind::kTagViolation);
  if (!valid_width(width) || straddles_word(addr, width)) {
    return AccessDecision::trap(TrapKind::kBoundsViolation);
  }
  if (!cap.bounds.contains(addr, width)) {
    return AccessDecision::trap(TrapKind::kBoundsViolation);
  }
  if (!needed.subset_of(cap.perms)) {
    return AccessDecision::trap(TrapKind::kPermissionViolation);
  }
  const auto* poison = std::get_if<PoisonWord>(&word);
  if (poison == nullptr) return AccessDecision::allow();
  if (recorder != nullptr) {
    recorder->record(poison_rule_row(
        cap.perms.has(Perm::kPoison),
        classify_bounds(cap.bounds, poison->bounds),
        (cap.version & 1) == (poison->version & 1), kind));
  }
  return decide_poison(cap, *poison, kind, cfg);
}

AccessDecision TaggedMemory::decide(const Capability& cap, Addr addr,
                                    unsigned width, AccessKind kind,
                                    PermSet needed, const DecodedWord& word,
                                    const SemanticsConfig& cfg) {
  return decide_access(cap, addr, width, kind, needed, word, cfg, recorder_);
}

AccessDecision check_access(const Capability& cap, Addr addr, unsigned width,
                            AccessKind kind, const DecodedWord& word,
                            const SemanticsConfig& cfg) {
  PermSet needed{static_cast<std::uint8_t>(
      kind == AccessKind::kRead ? static_cast<std::uint8_t>(Perm::kRead)
                                : static_cast<std::uint8_t>(Perm::kWrite))};
  return decide_access(cap, addr, width, kind, needed, word, cfg, nullptr);
}

TaggedMemory::TaggedMemory(std::uint64_t size_bytes) {
  assert(is_word_aligned(size_bytes));
  words_.resize(size_bytes / kWordBytes);
}

void TaggedMemory::emit(Addr addr, unsigned width, AccessKind kind) {
  if (!observer_) return;
  const WordImage& w = words_[align_down_word(addr) / kWordBytes];
  bool poisoned = w.tag && (w.raw[15] & 0x1);
  observer_(MemoryEvent{addr, width, kind, poisoned});
}

const WordImage& TaggedMemory::word_at(Addr addr) const {
  assert(addr < size());
  return words_[align_down_word(addr) / kWordBytes];
}

DecodedWord TaggedMemory::decode_at(Addr addr) const {
  return decode(word_at(addr));
}

void TaggedMemory::revoke_tag(Addr addr) {
  assert(addr < size());
  words_[align_down_word(addr) / kWordBytes].tag = false;
}

void TaggedMemory::poke_word(Addr addr, const WordImage& image) {
  assert(addr < size());
  words_[align_down_word(addr) / kWordBytes] = image;
}

Result<std::vector<std::uint8_t>, Trap> TaggedMemory::load(
    const Capability& cap, Addr addr, unsigned width,
    const SemanticsConfig& cfg) {
  if (addr >= size() || addr + width > size()) {
    return Trap{TrapKind::kBoundsViolation};
  }
  const DecodedWord word = decode_at(addr);
  const AccessDecision d =
      decide(cap, addr, width, AccessKind::kRead, PermSet{0x1}, word, cfg);
  switch (d.kind) {
    case AccessDecision::Kind::kAllow: {
      const WordImage& image = word_at(addr);
      const unsigned off = addr & (kWordBytes - 1);
      std::vector<std::uint8_t> out(image.raw.begin() + off,
                                    image.raw.begin() + off + width);
      emit(addr, width, AccessKind::kRead);
      return out;
    }
    case AccessDecision::Kind::kAllowAutoZero: {
      emit(addr, width, AccessKind::kRead);
      return std::vector<std::uint8_t>(width, 0);
    }
    case AccessDecision::Kind::kCancel:
      assert(false && "loads cannot be cancelled");
      return Trap{TrapKind::kUseAfterFree};
    case AccessDecision::Kind::kTrap:
      return Trap{d.trap_kind};
  }
  return Trap{TrapKind::kBoundsViolation};
}

Result<TaggedMemory::StoreOutcome, Trap> TaggedMemory::store(
    const Capability& cap, Addr addr, unsigned width,
    const std::vector<std::uint8_t>& bytes, const SemanticsConfig& cfg) {
  if (bytes.size() != width) return Trap{TrapKind::kBoundsViolation};
  if (addr >= size() || addr + width > size()) {
    return Trap{TrapKind::kBoundsViolation};
  }
  const DecodedWord word = decode_at(addr);
  const AccessDecision d =
      decide(cap, addr, width, AccessKind::kWrite, PermSet{0x2}, word, cfg);
  WordImage& image = words_[align_down_word(addr) / kWordBytes];
  const unsigned off = addr & (kWordBytes - 1);
  switch (d.kind) {
    case AccessDecision::Kind::kAllow:
      std::copy(bytes.begin(), bytes.end(), image.raw.begin() + off);
      image.tag = false;
      emit(addr, width, AccessKind::kWrite);
      return StoreOutcome::kStored;
    case AccessDecision::Kind::kAllowAutoZero:
      image.raw.fill(0);
      image.tag = false;
      std::copy(bytes.begin(), bytes.end(), image.raw.begin() + off);
      emit(addr, width, AccessKind::kWrite);
      return StoreOutcome::kStored;
    case AccessDecision::Kind::kCancel:
      ++cancelled_stores_;
      emit(addr, width, AccessKind::kWrite);
      return StoreOutcome::kCancelled;
    case AccessDecision::Kind::kTrap:
      return Trap{d.trap_kind};
  }
  return Trap{TrapKind::kBoundsViolation};
}

Result<WordImage, Trap> TaggedMemory::load_cap(const Capability& cap,
                                               Addr addr,
                                               const SemanticsConfig& cfg) {
  if (!is_word_aligned(addr)) return Trap{TrapKind::kBoundsViolation};
  if (addr + kWordBytes > size()) return Trap{TrapKind::kBoundsViolation};
  const DecodedWord word = decode_at(addr);
  const AccessDecision d =
      decide(cap, addr, kWordBytes, AccessKind::kRead,
             PermSet{0x1 | 0x4},  // READ|LOAD_CAP
             word, cfg);
  switch (d.kind) {
    case AccessDecision::Kind::kAllow:
      emit(addr, kWordBytes, AccessKind::kRead);
      return word_at(addr);
    case AccessDecision::Kind::kAllowAutoZero:
      emit(addr, kWordBytes, AccessKind::kRead);
      return WordImage{};
    case AccessDecision::Kind::kCancel:
      assert(false && "capability loads cannot be cancelled");
      return Trap{TrapKind::kUseAfterFree};
    case AccessDecision::Kind::kTrap:
      return Trap{d.trap_kind};
  }
  return Trap{TrapKind::kBoundsViolation};
}

Result<TaggedMemory::StoreOutcome, Trap> TaggedMemory::store_cap(
    const Capability& cap, Addr addr, const Capability& value,
    const SemanticsConfig& cfg) {
  if (!is_word_aligned(addr)) return Trap{TrapKind::kBoundsViolation};
  if (addr + kWordBytes > size()) return Trap{TrapKind::kBoundsViolation};
  const DecodedWord word = decode_at(addr);
  const AccessDecision d =
      decide(cap, addr, kWordBytes, AccessKind::kWrite,
             PermSet{0x2 | 0x8},  // WRITE|STORE_CAP
             word, cfg);
  switch (d.kind) {
    case AccessDecision::Kind::kAllow:
    case AccessDecision::Kind::kAllowAutoZero:
      // A capability store covers the full word, so the auto-zero of the
      // unwritten remainder is vacuous; the stored value keeps its tag.
      words_[addr / kWordBytes] = encode_for_store(value);
      emit(addr, kWordBytes, AccessKind::kWrite);
      return StoreOutcome::kStored;
    case AccessDecision::Kind::kCancel:
      ++cancelled_stores_;
      emit(addr, kWordBytes, AccessKind::kWrite);
      return StoreOutcome::kCancelled;
    case AccessDecision::Kind::kTrap:
      return Trap{d.trap_kind};
  }
  return Trap{TrapKind::kBoundsViolation};
}

Result<TaggedMemory::StoreOutcome, Trap> TaggedMemory::cpoison(
    const Capability& cap, Addr addr, std::uint64_t nwords,
    const SemanticsConfig& cfg) {
  if (!cap.tag) return Trap{TrapKind::kTagViolation};
  if (!is_word_aligned(addr) || nwords == 0) {
    return Trap{TrapKind::kBoundsViolation};
  }
  const std::uint64_t span = nwords * kWordBytes;
  if (addr + span > size() || !cap.bounds.contains(addr, span)) {
    return Trap{TrapKind::kBoundsViolation};
  }
  if (!cap.perms.has(Perm::kWrite)) {
    return Trap{TrapKind::kPermissionViolation};
  }
  // First pass: every word must be writable under the matrix before any
  // mutation happens (all-or-nothing).
  for (std::uint64_t i = 0; i < nwords; ++i) {
    const Addr a = addr + i * kWordBytes;
    const AccessDecision d = decide(cap, a, kWordBytes, AccessKind::kWrite,
                                    PermSet{0x2}, decode_at(a), cfg);
    if (d.is_trap()) return Trap{d.trap_kind};
    if (d.kind == AccessDecision::Kind::kCancel) {
      ++cancelled_stores_;
      return StoreOutcome::kCancelled;
    }
  }
  const auto image = encode(PoisonWord{cap.bounds, cap.version});
  assert(image.ok());
  for (std::uint64_t i = 0; i < nwords; ++i) {
    const Addr a = addr + i * kWordBytes;
    words_[a / kWordBytes] = image.value();
    emit(a, kWordBytes, AccessKind::kWrite);
  }
  return StoreOutcome::kStored;
}

Result<bool, Trap> TaggedMemory::cgetpoison(const Capability& cap,
                                            Addr addr) {
  if (!cap.tag) return Trap{TrapKind::kTagViolation};
  if (!is_word_aligned(addr) || addr + kWordBytes > size() ||
      !cap.bounds.contains(addr, kWordBytes)) {
    return Trap{TrapKind::kBoundsViolation};
  }
  if (!cap.perms.has(Perm::kRead)) {
    return Trap{TrapKind::kPermissionViolation};
  }
  emit(addr, kWordBytes, AccessKind::kRead);
  const WordImage& w = word_at(addr);
  return w.tag && (w.raw[15] & 0x1) != 0;
}

Result<TaggedMemory::CapClass, Trap> TaggedMemory::cgetcappoison(
    const Capability& cap, Addr addr) {
  if (!cap.tag) return Trap{TrapKind::kTagViolation};
  if (!is_word_aligned(addr) || addr + kWordBytes > size() ||
      !cap.bounds.contains(addr, kWordBytes)) {
    return Trap{TrapKind::kBoundsViolation};
  }
  if (!cap.perms.has(Perm::kRead)) {
    return Trap{TrapKind::kPermissionViolation};
  }
  emit(addr, kWordBytes, AccessKind::kRead);
  const WordImage& w = word_at(addr);
  if (!w.tag) return CapClass::kNotCap;
  return (w.raw[15] & 0x1) != 0 ? CapClass::kPoisonCap : CapClass::kCap;
}

std::string TaggedMemory::dump_word(std::uint64_t word_index) const {
  const WordImage& w = words_[word_index];
  char hex[33];
  for (int i = 0; i < 16; ++i) {
    std::snprintf(hex + 2 * i, 3, "%02x", w.raw[i]);
  }
  const char* kind = "data";
  if (w.tag) kind = (w.raw[15] & 0x1) ? "poison" : "cap";
  char line[96];
  std::snprintf(line, sizeof(line), "%08llx  %s  tag=%d  %s",
                static_cast<unsigned long long>(word_index * kWordBytes), hex,
                w.tag ? 1 : 0, kind);
  return line;
}

std::string TaggedMemory::dump(Addr from, Addr to) const {
  std::string out;
  for (std::uint64_t i = align_down_word(from) / kWordBytes;
       i < (to + kWordBytes - 1) / kWordBytes && i < words_.size(); ++i) {
    out += dump_word(i);
    out += '\n';
  }
  return out;
}

}  // namespace poisoncap
