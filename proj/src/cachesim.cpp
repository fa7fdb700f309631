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

#include "poisoncap/cachesim.hpp"

#include <cassert>

namespace poisoncap {

CacheHierarchy::Line* CacheHierarchy::Level::find(std::uint64_t set,
                                                  std::uint64_t tag) {
  for (unsigned w = 0; w < ways; ++w) {
    Line& line = lines[set * ways + w];
    if (line.valid && line.tag == tag) return &line;
  }
  return nullptr;
}

CacheHierarchy::CacheHierarchy(const CacheGeometry& geom, CachePolicy policy,
                               std::uint64_t memory_bytes)
    : geom_(geom), policy_(policy) {
  auto setup = [&](Level& lv, const LevelGeometry& g) {
    assert(g.capacity_bytes % (g.ways * geom.line_bytes) == 0);
    lv.ways = g.ways;
    lv.sets = g.capacity_bytes / (g.ways * geom.line_bytes);
    lv.lines.assign(lv.sets * lv.ways, Line{});
  };
  setup(l1_, geom.l1);
  setup(llc_, geom.llc);
  word_poisoned_.assign(memory_bytes / kWordBytes, false);
}

bool CacheHierarchy::words_all_poisoned(Addr line_addr) const {
  const Addr first_word = line_addr * geom_.line_bytes / kWordBytes;
  const unsigned words = geom_.line_bytes / kWordBytes;
  for (unsigned i = 0; i < words; ++i) {
    if (first_word + i >= word_poisoned_.size() ||
        !word_poisoned_[first_word + i]) {
      return false;
    }
  }
  return true;
}

void CacheHierarchy::refresh_poison_flag(Addr la) {
  const bool poisoned = words_all_poisoned(la);
  if (Line* line = l1_.find(la % l1_.sets, la / l1_.sets)) {
    line->poisoned = poisoned;
  }
  if (Line* line = llc_.find(la % llc_.sets, la / llc_.sets)) {
    line->poisoned = poisoned;
  }
}

unsigned CacheHierarchy::pick_victim(const Level& lv,
                                     std::uint64_t set) const {
  unsigned lru_way = 0;
  std::uint64_t lru_rank = ~std::uint64_t{0};
  unsigned poisoned_way = lv.ways;
  std::uint64_t poisoned_rank = ~std::uint64_t{0};
  for (unsigned w = 0; w < lv.ways; ++w) {
    const Line& line = lv.lines[set * lv.ways + w];
    if (!line.valid) return w;
    if (line.lru_rank < lru_rank) {
      lru_rank = line.lru_rank;
      lru_way = w;
    }
    if (policy_ == CachePolicy::kPoisonAware && line.poisoned &&
        line.lru_rank < poisoned_rank) {
      poisoned_rank = line.lru_rank;
      poisoned_way = w;
    }
  }
  if (poisoned_way < lv.ways) return poisoned_way;
  return lru_way;
}

unsigned CacheHierarchy::victim_way(unsigned level,
                                    std::uint64_t set_index) const {
  return pick_victim(level == 0 ? l1_ : llc_, set_index);
}

bool CacheHierarchy::line_present(unsigned level, Addr addr) const {
  const Addr la = line_addr(addr);
  auto& lv = const_cast<Level&>(level == 0 ? l1_ : llc_);
  return lv.find(la % lv.sets, la / lv.sets) != nullptr;
}

bool CacheHierarchy::line_poisoned(unsigned level, Addr addr) const {
  const Addr la = line_addr(addr);
  auto& lv = const_cast<Level&>(level == 0 ? l1_ : llc_);
  Line* line = lv.find(la % lv.sets, la / lv.sets);
  return line != nullptr && line->poisoned;
}

void CacheHierarchy::evict_from_l1(Addr la) {
  const std::uint64_t set = la % l1_.sets;
  Line* line = l1_.find(set, la / l1_.sets);
  if (line == nullptr) return;
  if (line->dirty) {
    // Fold the fresher L1 copy into the LLC line before it leaves.
    ++stats_.l1.writebacks;
    if (Line* below = llc_.find(la % llc_.sets, la / llc_.sets)) {
      below->dirty = true;
    }
  }
  line->valid = false;
}

void CacheHierarchy::install(unsigned level_idx, Addr la, bool dirty) {
  Level& lv = level_idx == 0 ? l1_ : llc_;
  LevelStats& st = level_idx == 0 ? stats_.l1 : stats_.llc;
  const std::uint64_t set = la % lv.sets;
  const std::uint64_t tag = la / lv.sets;
  const unsigned way = pick_victim(lv, set);
  Line& victim = lv.lines[set * lv.ways + way];
  if (victim.valid) {
    const Addr victim_la = victim.tag * lv.sets + set;
    if (level_idx == 1) {
      // Inclusive hierarchy: an LLC eviction pulls the line out of L1.
      evict_from_l1(victim_la);
    }
    if (victim.dirty) {
      ++st.writebacks;
      if (level_idx == 0) {
        if (Line* below = llc_.find(victim_la % llc_.sets,
                                    victim_la / llc_.sets)) {
          below->dirty = true;
        }
      } else {
        stats_.llc.dram_bytes += geom_.line_bytes;
      }
    }
  }
  victim =
      Line{true, dirty, words_all_poisoned(la), tag, tick_};
}

void CacheHierarchy::access(Addr addr, AccessKind kind,
                            bool word_is_poison_after) {
  const Addr la = line_addr(addr);
  ++tick_;

  const bool write = kind == AccessKind::kWrite;
  if (write) {
    const Addr word = addr / kWordBytes;
    if (word < word_poisoned_.size()) {
      word_poisoned_[word] = word_is_poison_after;
    }
  }

  Line* in_l1 = l1_.find(la % l1_.sets, la / l1_.sets);
  if (in_l1 != nullptr) {
    ++stats_.l1.hits;
    in_l1->lru_rank = tick_;
    if (write) in_l1->dirty = true;
  } else {
    ++stats_.l1.misses;
    Line* in_llc = llc_.find(la % llc_.sets, la / llc_.sets);
    if (in_llc != nullptr) {
      ++stats_.llc.hits;
      in_llc->lru_rank = tick_;
    } else {
      ++stats_.llc.misses;
      stats_.llc.dram_bytes += geom_.line_bytes;  // fill
      install(1, la, /*dirty=*/false);
    }
    install(0, la, /*dirty=*/write);
    if (write) {
      // Write-allocate: the L1 copy carries the dirty data.
    }
  }
  if (write) refresh_poison_flag(la);
}

CacheStats run_trace(CacheHierarchy& hier,
                     const std::vector<TraceOp>& trace) {
  for (const TraceOp& op : trace) {
    hier.access(op.addr, op.kind, op.poison_after);
  }
  return hier.stats();
}

}  // namespace poisoncap
