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

#ifndef POISONCAP_CAP_HPP
#define POISONCAP_CAP_HPP

#include <array>
#include <cstdint>
#include <string>
#include <variant>

#include "poisoncap/result.hpp"

namespace poisoncap {

using Addr = std::uint64_t;

/// Word granule: one capability is 16 bytes plus an out-of-band tag bit.
inline constexpr Addr kWordBytes = 16;
/// Lengths are stored in 48 bits of the word image.
inline constexpr std::uint64_t kMaxLength = (std::uint64_t{1} << 48);

constexpr Addr align_down_word(Addr a) { return a & ~(kWordBytes - 1); }
constexpr bool is_word_aligned(Addr a) { return (a & (kWordBytes - 1)) == 0; }

// ---------------------------------------------------------------------------
// Permissions

enum class Perm : std::uint8_t {
  kRead = 1u << 0,
  kWrite = 1u << 1,
  kLoadCap = 1u << 2,
  kStoreCap = 1u << 3,
  // Privileged permission: store poison, overwrite poison regardless of
  // bounds, and update the memory version of a capability.
  kPoison = 1u << 4,
};

struct PermSet {
  std::uint8_t mask = 0;

  static constexpr PermSet none() { return PermSet{0}; }
  static constexpr PermSet data() {
    return PermSet{static_cast<std::uint8_t>(
        static_cast<std::uint8_t>(Perm::kRead) |
        static_cast<std::uint8_t>(Perm::kWrite))};
  }
  /// READ|WRITE|LOAD_CAP|STORE_CAP: what an allocator hands out.
  static constexpr PermSet user() {
    return PermSet{0b0'1111};
  }
  /// Everything, including the poison privilege.
  static constexpr PermSet all() { return PermSet{0b1'1111}; }

  constexpr bool has(Perm p) const {
    return (mask & static_cast<std::uint8_t>(p)) != 0;
  }
  constexpr PermSet without(Perm p) const {
    return PermSet{static_cast<std::uint8_t>(
        mask & ~static_cast<std::uint8_t>(p))};
  }
  constexpr bool subset_of(PermSet other) const {
    return (mask & ~other.mask) == 0;
  }
  bool operator==(const PermSet&) const = default;
};

// ---------------------------------------------------------------------------
// Bounds

/// Half-open byte range [base, base+length). base+length must not wrap.
struct Bounds {
  Addr base = 0;
  std::uint64_t length = 0;

  constexpr Addr limit() const { return base + length; }
  constexpr bool valid() const { return base <= base + length; }
  constexpr bool word_aligned() const {
    return is_word_aligned(base) && is_word_aligned(length);
  }
  /// True iff [addr, addr+width) lies inside these bounds.
  constexpr bool contains(Addr addr, std::uint64_t width) const {
    return addr >= base && width <= length && addr - base <= length - width;
  }
  bool operator==(const Bounds&) const = default;
};

/// Containment is inclusive: equal bounds contain each other. Callers that
/// need a strict superset (the upstream-allocator rule) test inequality too.
constexpr bool bounds_contains(const Bounds& outer, const Bounds& inner) {
  return outer.base <= inner.base && inner.limit() <= outer.limit();
}

constexpr bool bounds_strictly_contains(const Bounds& outer,
                                        const Bounds& inner) {
  return bounds_contains(outer, inner) && !(outer == inner);
}

/// Relation of an accessing capability's bounds to the poison bounds found
/// in memory. The accessed word lies in both ranges, so full disjointness
/// cannot arise; the residual case is a partial overlap.
enum class BoundsRel : std::uint8_t {
  kStrictSuperset = 0,
  kEqual = 1,
  kStrictSubset = 2,
  kPartialOverlap = 3,
};

constexpr BoundsRel classify_bounds(const Bounds& cap, const Bounds& poison) {
  if (cap == poison) return BoundsRel::kEqual;
  if (bounds_contains(cap, poison)) return BoundsRel::kStrictSuperset;
  if (bounds_contains(poison, cap)) return BoundsRel::kStrictSubset;
  return BoundsRel::kPartialOverlap;
}

// ---------------------------------------------------------------------------
// Capability values

/// An authorising reference. An untagged capability authorises nothing.
/// Version is the 1-bit memory generation used for initialisation safety.
struct Capability {
  Bounds bounds;
  PermSet perms;
  std::uint8_t version = 0;  // 0 or 1
  bool tag = false;

  bool has_perm(Perm p) const { return tag && perms.has(p); }
  bool operator==(const Capability&) const = default;
};

/// A poison capability resident in memory: denies access to the word it
/// occupies and records the bounds and version of the freed allocation.
struct PoisonWord {
  Bounds bounds;             // poison_bounds
  std::uint8_t version = 0;  // poison_version
  bool operator==(const PoisonWord&) const = default;
};

/// One 16-byte memory word plus its tag bit.
struct WordImage {
  std::array<std::uint8_t, 16> raw{};
  bool tag = false;
  bool operator==(const WordImage&) const = default;
};

struct RawWord {
  std::array<std::uint8_t, 16> bytes{};
  bool operator==(const RawWord&) const = default;
};

/// Every word decodes: untagged words are raw data, tagged words are a
/// capability or a poison capability according to the poison flag bit.
using DecodedWord = std::variant<RawWord, Capability, PoisonWord>;

// ---------------------------------------------------------------------------
// Encoding
//
// Fixed, uncompressed 128-bit layout (stable; memory dumps and golden tests
// depend on it):
//   bytes 0-7   base, little endian
//   bytes 8-13  length, 48-bit little endian
//   byte  14    permission mask (bit0 READ, bit1 WRITE, bit2 LOAD_CAP,
//               bit3 STORE_CAP, bit4 POISON); zero for poison words
//   byte  15    flags (bit0 poison flag, bit1 version)

enum class CapError : std::uint8_t {
  kEncodingRange,
  kTagViolation,
  kPermissionViolation,
  kMonotonicityViolation,
};

std::string to_string(CapError e);

Result<WordImage, CapError> encode(const Capability& cap);
Result<WordImage, CapError> encode(const PoisonWord& poison);

/// Encode a capability value for storage regardless of its tag; the image
/// tag mirrors the value tag. Used by capability stores, which may legally
/// store untagged values.
WordImage encode_for_store(const Capability& cap);

DecodedWord decode(const WordImage& word);

/// Canonical re-encoding of a decoded value; identity on canonical images.
WordImage reencode(const DecodedWord& word);

inline bool is_poison(const DecodedWord& w) {
  return std::holds_alternative<PoisonWord>(w);
}
inline bool is_capability(const DecodedWord& w) {
  return std::holds_alternative<Capability>(w);
}

// ---------------------------------------------------------------------------
// Capability algebra. Monotonic: bounds can only narrow, permissions can
// only be dropped. Versions are privileged (POISON permission).

Result<Capability, CapError> set_bounds(const Capability& cap,
                                        const Bounds& narrower);
Result<Capability, CapError> clear_perm(const Capability& cap, Perm perm);
Result<Capability, CapError> set_version(const Capability& cap,
                                         std::uint8_t version);

}  // namespace poisoncap

#endif  // POISONCAP_CAP_HPP
