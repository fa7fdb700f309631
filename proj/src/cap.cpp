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

#include "poisoncap/cap.hpp"

namespace poisoncap {

namespace {

constexpr std::uint8_t kFlagPoison = 1u << 0;
constexpr std::uint8_t kFlagVersion = 1u << 1;

void pack_u64(std::array<std::uint8_t, 16>& raw, int at, std::uint64_t v,
              int nbytes) {
  for (int i = 0; i < nbytes; ++i) {
    raw[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
}

std::uint64_t unpack_u64(const std::array<std::uint8_t, 16>& raw, int at,
                         int nbytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i) {
    v |= static_cast<std::uint64_t>(raw[at + i]) << (8 * i);
  }
  return v;
}

WordImage pack(const Bounds& bounds, std::uint8_t perm_mask,
               std::uint8_t version, bool poison) {
  WordImage w;
  pack_u64(w.raw, 0, bounds.base, 8);
  pack_u64(w.raw, 8, bounds.length, 6);
  w.raw[14] = perm_mask;
  w.raw[15] = static_cast<std::uint8_t>((poison ? kFlagPoison : 0) |
                                        (version ? kFlagVersion : 0));
  w.tag = true;
  return w;
}

}  // namespace

std::string to_string(CapError e) {
  switch (e) {
    case CapError::kEncodingRange: return "EncodingRange";
    case CapError::kTagViolation: return "TagViolation";
    case CapError::kPermissionViolation: return "PermissionViolation";
    case CapError::kMonotonicityViolation: return "MonotonicityViolation";
  }
  return "?";
}

Result<WordImage, CapError> encode(const Capability& cap) {
  if (!cap.tag) return CapError::kTagViolation;
  if (cap.bounds.length >= kMaxLength) return CapError::kEncodingRange;
  return pack(cap.bounds, cap.perms.mask, cap.version, /*poison=*/false);
}

Result<WordImage, CapError> encode(const PoisonWord& poison) {
  if (poison.bounds.length >= kMaxLength) return CapError::kEncodingRange;
  return pack(poison.bounds, 0, poison.version, /*poison=*/true);
}

WordImage encode_for_store(const Capability& cap) {
  WordImage w = pack(cap.bounds, cap.perms.mask, cap.version,
                     /*poison=*/false);
  w.tag = cap.tag;
  return w;
}

DecodedWord decode(const WordImage& word) {
  if (!word.tag) return RawWord{word.raw};
  Bounds bounds{unpack_u64(word.raw, 0, 8), unpack_u64(word.raw, 8, 6)};
  std::uint8_t version = (word.raw[15] & kFlagVersion) ? 1 : 0;
  if (word.raw[15] & kFlagPoison) {
    return PoisonWord{bounds, version};
  }
  return Capability{bounds, PermSet{static_cast<std::uint8_t>(
                                word.raw[14] & PermSet::all().mask)},
                    version, /*tag=*/true};
}

WordImage reencode(const DecodedWord& word) {
  if (const auto* raw = std::get_if<RawWord>(&word)) {
    return WordImage{raw->bytes, false};
  }
  if (const auto* cap = std::get_if<Capability>(&word)) {
    return encode_for_store(*cap);
  }
  const auto& poison = std::get<PoisonWord>(word);
  return pack(poison.bounds, 0, poison.version, /*poison=*/true);
}

Result<Capability, CapError> set_bounds(const Capability& cap,
                                        const Bounds& narrower) {
  if (!cap.tag) return CapError::kTagViolation;
  if (!narrower.valid() || !bounds_contains(cap.bounds, narrower)) {
    return CapError::kMonotonicityViolation;
  }
  Capability out = cap;
  out.bounds = narrower;
  return out;
}

Result<Capability, CapError> clear_perm(const Capability& cap, Perm perm) {
  if (!cap.tag) return CapError::kTagViolation;
  Capability out = cap;
  out.perms = out.perms.without(perm);
  return out;
}

Result<Capability, CapError> set_version(const Capability& cap,
                                         std::uint8_t version) {
  if (!cap.tag) return CapError::kTagViolation;
  if (!cap.perms.has(Perm::kPoison)) return CapError::kPermissionViolation;
  Capability out = cap;
  out.version = version & 1;
  return out;
}

}  // namespace poisoncap
