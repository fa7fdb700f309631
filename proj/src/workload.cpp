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

#include "poisoncap/workload.hpp"

#include <random>
#include <vector>

namespace poisoncap {

namespace {

struct LiveAlloc {
  std::string name;
  std::uint64_t size = 0;
  std::vector<std::uint64_t> written_offsets;  // 8-byte stores
};

Step make_sweep() {
  Step s;
  s.op = OpKind::kSweep;
  return s;
}

Step make_flush() {
  Step s;
  s.op = OpKind::kFlush;
  return s;
}

}  // namespace

Scenario gen_random_workload(std::uint64_t seed, std::uint64_t n_ops,
                             bool nested) {
  std::mt19937_64 rng(seed);
  Scenario sc;
  sc.name = "random_workload_seed_" + std::to_string(seed);
  sc.config.revoker = RevokerChoice::kPoison;
  sc.config.semantics = SemanticsConfig::strict();
  sc.expect = Expectation{Expectation::Kind::kOk, {}, {}};

  const std::uint64_t heap_bytes = sc.config.heap.heap_bounds.length;
  // Power-of-two size classes keep recycled-region splitting fragmentation
  // bounded (the heap freelist does not coalesce).
  const std::uint64_t size_classes[] = {16, 32, 64, 128};

  std::vector<LiveAlloc> live;
  std::uint64_t live_bytes = 0;
  std::uint64_t quarantine_bytes = 0;
  std::uint64_t next_handle = 0;
  bool arena_made = false;

  auto emit_sweep_flush = [&]() {
    sc.steps.push_back(make_sweep());
    sc.steps.push_back(make_flush());
    quarantine_bytes = 0;
  };

  auto do_free = [&](std::size_t idx) {
    Step s;
    s.op = OpKind::kFree;
    s.ptr = live[idx].name;
    sc.steps.push_back(s);
    quarantine_bytes += live[idx].size;
    live_bytes -= live[idx].size;
    live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
  };

  for (std::uint64_t op = 0; op < n_ops; ++op) {
    // Keep headroom: quarantine below the revocation threshold and the
    // live set well under the heap.
    if (quarantine_bytes >= heap_bytes / 8) emit_sweep_flush();
    while (live_bytes > heap_bytes / 3 && !live.empty()) {
      do_free(rng() % live.size());
    }

    if (nested && !arena_made && op == 10) {
      Step s;
      s.op = OpKind::kArenaNew;
      s.dst = "arena0";
      s.size = 4096;
      sc.steps.push_back(s);
      arena_made = true;
      live_bytes += 4096;
      continue;
    }

    const unsigned roll = static_cast<unsigned>(rng() % 100);
    if (roll < 40 || live.empty()) {
      const std::uint64_t size = size_classes[rng() % 4];
      Step s;
      s.op = OpKind::kMalloc;
      s.dst = "h" + std::to_string(next_handle++);
      s.size = size;
      sc.steps.push_back(s);
      live.push_back(LiveAlloc{s.dst, size, {}});
      live_bytes += size;
    } else if (roll < 65) {
      LiveAlloc& target = live[rng() % live.size()];
      Step s;
      s.op = OpKind::kStore;
      s.ptr = target.name;
      s.width = 8;
      s.offset = (rng() % (target.size / 8)) * 8;
      s.value = rng();
      sc.steps.push_back(s);
      target.written_offsets.push_back(s.offset);
    } else if (roll < 75) {
      // Read back a previously written location (write-before-read).
      const LiveAlloc& target = live[rng() % live.size()];
      if (!target.written_offsets.empty()) {
        Step s;
        s.op = OpKind::kLoad;
        s.ptr = target.name;
        s.width = 8;
        s.offset =
            target.written_offsets[rng() % target.written_offsets.size()];
        sc.steps.push_back(s);
      }
    } else if (roll < 82 && live.size() >= 2) {
      // Plant a capability in memory; sweeps must find it there.
      const LiveAlloc& value = live[rng() % live.size()];
      LiveAlloc& target = live[rng() % live.size()];
      Step s;
      s.op = OpKind::kStoreCap;
      s.ptr = target.name;
      s.src = value.name;
      s.offset = (rng() % (target.size / kWordBytes)) * kWordBytes;
      sc.steps.push_back(s);
      // The planted word now holds a capability, not data; forget any
      // recorded data writes that alias it.
      std::erase_if(target.written_offsets, [&](std::uint64_t off) {
        return off / kWordBytes == s.offset / kWordBytes;
      });
    } else if (!live.empty()) {
      do_free(rng() % live.size());
    }
  }
  emit_sweep_flush();
  if (arena_made) sc.tags.push_back("nested");
  return sc;
}

CompareResult compare_revokers(std::uint64_t seed, std::uint64_t n_ops,
                               bool nested) {
  Scenario sc = gen_random_workload(seed, n_ops, nested);
  if (sc.has_tag("nested")) {
    return CompareResult{false, "NestedUnsupportedByBaseline", 0, 0, 0};
  }

  RunOptions opts;
  opts.record_revocations = true;

  opts.revoker_override = RevokerChoice::kPoison;
  RunReport poison = run_scenario(sc, opts);
  opts.revoker_override = RevokerChoice::kShadow;
  RunReport shadow = run_scenario(sc, opts);

  CompareResult out;
  out.sweeps = poison.sweeps.size();
  out.poison_shadow_bytes =
      poison.sweeps.empty() ? 0 : poison.sweeps.back().shadow_bytes;
  out.baseline_shadow_bytes =
      shadow.sweeps.empty() ? 0 : shadow.sweeps.back().shadow_bytes;

  if (poison.verdict == "error" || shadow.verdict == "error") {
    out.divergence = "run error: poison='" + poison.error_message +
                     "' shadow='" + shadow.error_message + "'";
    return out;
  }
  if (poison.revocations.size() != shadow.revocations.size()) {
    out.divergence = "sweep count mismatch";
    return out;
  }
  for (std::size_t i = 0; i < poison.revocations.size(); ++i) {
    if (!(poison.revocations[i] == shadow.revocations[i])) {
      out.divergence = "sweep " + std::to_string(i) + " revoked sets differ";
      return out;
    }
  }
  out.equal = true;
  return out;
}

// ---------------------------------------------------------------------------
// Cache churn

std::vector<TraceOp> gen_churn_trace(std::uint64_t seed,
                                     const CacheGeometry& geom,
                                     const ChurnParams& params) {
  std::mt19937_64 rng(seed);
  std::vector<TraceOp> trace;

  const std::uint64_t line = geom.line_bytes;
  const std::uint64_t llc_lines =
      geom.llc.capacity_bytes / geom.line_bytes;
  const std::uint64_t hot_lines = llc_lines / params.hot_fraction_of_llc;
  const Addr hot_base = 0;
  const Addr churn_base = hot_lines * line;
  // The churn arena is much larger than the LLC so quarantined lines are
  // not re-touched before they would naturally be evicted.
  const std::uint64_t churn_span_lines = llc_lines * 8;

  const unsigned words_per_line = static_cast<unsigned>(line / kWordBytes);
  std::uint64_t churn_cursor = 0;
  std::uint64_t hot_cursor = 0;

  const bool poison_mode = params.free_mode == ChurnFreeMode::kPoison;

  for (std::uint64_t it = 0; it < params.iterations; ++it) {
    // Revisit the hot working set round-robin, mixing in writes so the
    // hot lines carry dirty data.
    for (unsigned t = 0; t < params.hot_touches_per_iter; ++t) {
      const Addr addr = hot_base + (hot_cursor % hot_lines) * line +
                        (rng() % words_per_line) * kWordBytes;
      ++hot_cursor;
      const bool write = (hot_cursor % 4) == 0;
      trace.push_back(
          {addr, write ? AccessKind::kWrite : AccessKind::kRead, false});
    }
    // Allocate a short-lived buffer: write it, read a little, free it.
    for (unsigned l = 0; l < params.churn_lines_per_iter; ++l) {
      const Addr la =
          churn_base + (churn_cursor % churn_span_lines) * line;
      ++churn_cursor;
      for (unsigned w = 0; w < words_per_line; ++w) {
        trace.push_back(
            {la + w * kWordBytes, AccessKind::kWrite, false});
      }
      trace.push_back({la + (rng() % words_per_line) * kWordBytes,
                       AccessKind::kRead, false});
      // Free: the same store traffic either paints poison or zeros.
      for (unsigned w = 0; w < words_per_line; ++w) {
        trace.push_back(
            {la + w * kWordBytes, AccessKind::kWrite, poison_mode});
      }
    }
  }
  return trace;
}

ChurnComparison run_churn_ab(std::uint64_t seed, const CacheGeometry& geom,
                             const ChurnParams& params) {
  const std::vector<TraceOp> trace = gen_churn_trace(seed, geom, params);
  const std::uint64_t llc_lines = geom.llc.capacity_bytes / geom.line_bytes;
  const std::uint64_t mem_bytes =
      (llc_lines / params.hot_fraction_of_llc + llc_lines * 8 + 1) *
      geom.line_bytes;

  ChurnComparison out;
  CacheHierarchy pa(geom, CachePolicy::kPoisonAware, mem_bytes);
  out.poison_aware = run_trace(pa, trace);
  CacheHierarchy lru(geom, CachePolicy::kLru, mem_bytes);
  out.lru = run_trace(lru, trace);
  return out;
}

}  // namespace poisoncap
