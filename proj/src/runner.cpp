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

#include "poisoncap/runner.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include "json.hpp"

namespace poisoncap {

using nlohmann::ordered_json;

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

/// Executes one scenario against fresh simulator state.
class Simulation {
 public:
  Simulation(const Scenario& sc, const RunOptions& opts)
      : scenario_(sc), opts_(opts) {
    config_ = sc.config;
    if (opts.revoker_override) config_.revoker = *opts.revoker_override;
    if (opts.semantics_override) config_.semantics = *opts.semantics_override;
  }

  RunReport run() {
    RunReport report;
    report.name = scenario_.name;
    report.expected = scenario_.expect;
    if (!setup(report)) {
      report.verdict = "error";
      return report;
    }
    for (std::size_t i = 0; i < scenario_.steps.size(); ++i) {
      if (!execute(i, scenario_.steps[i], report)) break;
    }
    finalize(report);
    return report;
  }

  std::string dump() const {
    const Bounds& hb = config_.heap.heap_bounds;
    return mem_->dump(hb.base, hb.limit());
  }

 private:
  bool setup(RunReport& report) {
    const std::uint64_t mem_bytes = config_.memory_bytes;
    if (!is_word_aligned(mem_bytes) || mem_bytes == 0) {
      report.error_message = "memory_bytes must be 16-aligned";
      return false;
    }
    mem_.emplace(mem_bytes);
    if (opts_.collect_decisions) mem_->set_recorder(&recorder_);

    root_ = Capability{Bounds{0, mem_bytes}, PermSet::all(), 0, true};
    handles_["root"] = root_;
    for (const GenesisCap& g : config_.genesis) {
      if (!g.bounds.valid() || g.bounds.limit() > mem_bytes) {
        report.error_message = "genesis cap '" + g.name + "' out of range";
        return false;
      }
      handles_[g.name] =
          Capability{g.bounds, g.perms, static_cast<std::uint8_t>(g.version & 1),
                     true};
    }

    const HeapBackend backend = config_.revoker == RevokerChoice::kShadow
                                    ? HeapBackend::kShadow
                                    : HeapBackend::kPoison;
    if (backend == HeapBackend::kShadow) {
      bitmap_.emplace(config_.heap.heap_bounds);
    }
    auto heap = Heap::create(*mem_, root_, config_.heap, config_.semantics,
                             &clock_, backend,
                             bitmap_ ? &*bitmap_ : nullptr);
    if (!heap.ok()) {
      report.error_message =
          "heap setup failed: " + to_string(heap.error().kind);
      return false;
    }
    heap_.emplace(std::move(heap).take());

    if (config_.cache) {
      cache_.emplace(config_.cache_geometry, CachePolicy::kPoisonAware,
                     mem_bytes);
      mem_->set_observer([this](const MemoryEvent& ev) {
        cache_->access(ev.addr, ev.kind, ev.poison_after);
      });
    }
    return true;
  }

  bool fail_infra(RunReport& report, std::size_t step,
                  const std::string& message) {
    report.error_message =
        "step " + std::to_string(step) + ": " + message;
    infra_error_ = true;
    return false;
  }

  bool settle_trap(RunReport& report, std::size_t step, TrapKind kind) {
    report.observed =
        Observed{Expectation::Kind::kTrap, kind, step};
    terminal_ = true;
    return false;
  }

  bool settle_double_free(RunReport& report, std::size_t step) {
    report.observed =
        Observed{Expectation::Kind::kDoubleFree, std::nullopt, step};
    terminal_ = true;
    return false;
  }

  void note_cancel(std::size_t step) {
    if (!first_cancel_) first_cancel_ = step;
  }

  Capability* handle(const std::string& name) {
    auto it = handles_.find(name);
    return it == handles_.end() ? nullptr : &it->second;
  }

  bool alloc_error(RunReport& report, std::size_t i, const AllocError& err) {
    if (err.trap) return settle_trap(report, i, *err.trap);
    if (err.kind == AllocErrorKind::kDoubleFree) {
      return settle_double_free(report, i);
    }
    return fail_infra(report, i, to_string(err.kind));
  }

  bool execute(std::size_t i, const Step& s, RunReport& report) {
    switch (s.op) {
      case OpKind::kMalloc: {
        auto cap = heap_->malloc(s.size);
        if (!cap.ok()) return alloc_error(report, i, cap.error());
        handles_[s.dst] = cap.value();
        return true;
      }
      case OpKind::kFree: {
        Capability* cap = handle(s.ptr);
        if (cap == nullptr) return fail_infra(report, i, "unknown handle");
        auto freed = heap_->free(*cap);
        if (!freed.ok()) return alloc_error(report, i, freed.error());
        return true;
      }
      case OpKind::kArenaNew: {
        auto arena = Arena::create(*heap_, s.size);
        if (!arena.ok()) {
          if (arena.error().kind == AllocErrorKind::kConfigError &&
              heap_->backend() == HeapBackend::kShadow) {
            return fail_infra(report, i, "NestedUnsupportedByBaseline");
          }
          return alloc_error(report, i, arena.error());
        }
        handles_[s.dst] = arena.value().arena_cap();
        arenas_.emplace(s.dst, std::move(arena).take());
        return true;
      }
      case OpKind::kArenaMalloc: {
        auto it = arenas_.find(s.arena);
        if (it == arenas_.end()) return fail_infra(report, i, "unknown arena");
        auto cap = it->second.malloc(s.size);
        if (!cap.ok()) return alloc_error(report, i, cap.error());
        handles_[s.dst] = cap.value();
        return true;
      }
      case OpKind::kArenaFree: {
        auto it = arenas_.find(s.arena);
        Capability* cap = handle(s.ptr);
        if (it == arenas_.end() || cap == nullptr) {
          return fail_infra(report, i, "unknown handle");
        }
        auto freed = it->second.free(*cap);
        if (!freed.ok()) return alloc_error(report, i, freed.error());
        return true;
      }
      case OpKind::kLoad: {
        Capability* cap = handle(s.ptr);
        if (cap == nullptr) return fail_infra(report, i, "unknown handle");
        auto bytes = mem_->load(*cap, cap->bounds.base + s.offset, s.width,
                                config_.semantics);
        if (!bytes.ok()) return settle_trap(report, i, bytes.error().kind);
        if (s.expect_value) {
          std::uint64_t v = 0;
          for (std::size_t b = 0; b < bytes.value().size() && b < 8; ++b) {
            v |= static_cast<std::uint64_t>(bytes.value()[b]) << (8 * b);
          }
          if (v != *s.expect_value) {
            return fail_infra(report, i,
                              "loaded value " + std::to_string(v) +
                                  " != expected " +
                                  std::to_string(*s.expect_value));
          }
        }
        return true;
      }
      case OpKind::kStore: {
        Capability* cap = handle(s.ptr);
        if (cap == nullptr) return fail_infra(report, i, "unknown handle");
        std::vector<std::uint8_t> bytes(s.width);
        for (unsigned b = 0; b < s.width && b < 8; ++b) {
          bytes[b] = static_cast<std::uint8_t>(s.value >> (8 * b));
        }
        auto stored = mem_->store(*cap, cap->bounds.base + s.offset, s.width,
                                  bytes, config_.semantics);
        if (!stored.ok()) return settle_trap(report, i, stored.error().kind);
        if (stored.value() == TaggedMemory::StoreOutcome::kCancelled) {
          note_cancel(i);
        }
        return true;
      }
      case OpKind::kStoreCap: {
        Capability* cap = handle(s.ptr);
        Capability* value = handle(s.src);
        if (cap == nullptr || value == nullptr) {
          return fail_infra(report, i, "unknown handle");
        }
        auto stored = mem_->store_cap(*cap, cap->bounds.base + s.offset,
                                      *value, config_.semantics);
        if (!stored.ok()) return settle_trap(report, i, stored.error().kind);
        if (stored.value() == TaggedMemory::StoreOutcome::kCancelled) {
          note_cancel(i);
        }
        return true;
      }
      case OpKind::kLoadCap: {
        Capability* cap = handle(s.ptr);
        if (cap == nullptr) return fail_infra(report, i, "unknown handle");
        auto image = mem_->load_cap(*cap, cap->bounds.base + s.offset,
                                    config_.semantics);
        if (!image.ok()) return settle_trap(report, i, image.error().kind);
        if (!s.dst.empty()) {
          DecodedWord word = decode(image.value());
          if (const auto* c = std::get_if<Capability>(&word)) {
            handles_[s.dst] = *c;
          } else {
            // Raw data or poison loads as an untagged value.
            handles_[s.dst] = Capability{};
          }
        }
        return true;
      }
      case OpKind::kCpoison: {
        Capability* cap = handle(s.ptr);
        if (cap == nullptr) return fail_infra(report, i, "unknown handle");
        auto painted = mem_->cpoison(*cap, cap->bounds.base + s.offset,
                                     s.words, config_.semantics);
        if (!painted.ok()) return settle_trap(report, i, painted.error().kind);
        if (painted.value() == TaggedMemory::StoreOutcome::kCancelled) {
          note_cancel(i);
        }
        return true;
      }
      case OpKind::kCgetpoison: {
        Capability* cap = handle(s.ptr);
        if (cap == nullptr) return fail_infra(report, i, "unknown handle");
        auto poisoned =
            mem_->cgetpoison(*cap, cap->bounds.base + s.offset);
        if (!poisoned.ok()) {
          return settle_trap(report, i, poisoned.error().kind);
        }
        if (s.expect_bool && *s.expect_bool != poisoned.value()) {
          return fail_infra(report, i, "cgetpoison mismatch");
        }
        return true;
      }
      case OpKind::kSweep:
        return do_sweep(report);
      case OpKind::kFlush:
        return do_flush(report, i);
      case OpKind::kCacheNote:
        report.notes.push_back(s.note);
        return true;
    }
    return fail_infra(report, i, "unhandled op");
  }

  bool do_sweep(RunReport& report) {
    if (config_.revoker == RevokerChoice::kNone) return true;

    RootSet roots;
    for (auto& [name, cap] : handles_) {
      roots.register_caps.push_back(&cap);
    }
    roots.memory_regions.push_back(Bounds{0, mem_->size()});

    std::map<std::string, bool> handle_tags_before;
    std::vector<bool> word_tags_before;
    if (opts_.record_revocations) {
      for (const auto& [name, cap] : handles_) {
        handle_tags_before[name] = cap.tag;
      }
      word_tags_before.resize(mem_->word_count());
      for (std::uint64_t w = 0; w < mem_->word_count(); ++w) {
        word_tags_before[w] = mem_->word_at(w * kWordBytes).tag;
      }
    }

    SweepReport sweep;
    if (config_.revoker == RevokerChoice::kPoison) {
      sweep = sweep_poison(*mem_, roots, root_, clock_, opts_.sweep_exec);
    } else {
      sweep = sweep_shadow(*mem_, roots, *bitmap_, clock_, opts_.sweep_exec);
    }
    report.sweeps.push_back(sweep);
    last_token_ = sweep.token();
    heap_->clear_revocation_request();
    for (auto& [name, arena] : arenas_) arena.clear_revocation_request();

    if (opts_.record_revocations) {
      RevocationSet rs;
      for (const auto& [name, cap] : handles_) {
        if (handle_tags_before[name] && !cap.tag) rs.handles.push_back(name);
      }
      for (std::uint64_t w = 0; w < mem_->word_count(); ++w) {
        if (word_tags_before[w] && !mem_->word_at(w * kWordBytes).tag) {
          rs.words.push_back(w * kWordBytes);
        }
      }
      std::sort(rs.handles.begin(), rs.handles.end());
      report.revocations.push_back(std::move(rs));
    }
    return true;
  }

  bool do_flush(RunReport& report, std::size_t i) {
    auto flushed = heap_->quarantine_flush(last_token_);
    if (!flushed.ok()) {
      return fail_infra(report, i, to_string(flushed.error().kind));
    }
    for (auto& [name, arena] : arenas_) {
      auto af = arena.quarantine_flush(last_token_);
      if (!af.ok() && af.error().kind != AllocErrorKind::kStaleSweep) {
        return fail_infra(report, i, to_string(af.error().kind));
      }
    }
    return true;
  }

  void finalize(RunReport& report) {
    if (!terminal_ && !infra_error_ && first_cancel_) {
      report.observed =
          Observed{Expectation::Kind::kCancelled, std::nullopt, *first_cancel_};
    }
    report.cancelled_stores = mem_ ? mem_->cancelled_stores() : 0;
    if (heap_) {
      report.alloc = heap_->stats();
      report.double_frees = heap_->stats().double_frees;
      for (const auto& [name, arena] : arenas_) {
        report.double_frees += arena.stats().double_frees;
      }
    }
    for (const auto& sweep : report.sweeps) {
      report.revoked += sweep.caps_revoked;
      report.shadow_bytes = sweep.shadow_bytes;
    }
    if (cache_) report.cache = cache_->stats();
    if (opts_.collect_decisions) report.decision_rows = recorder_.row_hits;

    if (infra_error_) {
      report.verdict = "error";
      return;
    }
    const Expectation& want = scenario_.expect;
    const Observed& got = report.observed;
    bool match = want.kind == got.kind;
    if (match && want.kind == Expectation::Kind::kTrap && want.trap_kind &&
        got.trap_kind != want.trap_kind) {
      match = false;
    }
    if (match && want.at_step && got.at_step != want.at_step) {
      match = false;
    }
    if (match) {
      report.verdict = "pass";
    } else if (want.kind != Expectation::Kind::kOk &&
               got.kind == Expectation::Kind::kOk) {
      report.verdict = "undetected";
    } else {
      report.verdict = "fail";
    }
  }

  const Scenario& scenario_;
  RunOptions opts_;
  ScenarioConfig config_;

  std::optional<TaggedMemory> mem_;
  std::optional<Heap> heap_;
  std::optional<ShadowBitmap> bitmap_;
  std::optional<CacheHierarchy> cache_;
  SweepClock clock_;
  Capability root_;
  std::map<std::string, Capability> handles_;
  std::map<std::string, Arena> arenas_;
  DecisionRecorder recorder_;
  SweepToken last_token_{0};

  bool terminal_ = false;
  bool infra_error_ = false;
  std::optional<std::size_t> first_cancel_;
};

ordered_json observed_json(const Observed& o) {
  ordered_json j;
  j["outcome"] = to_string(o.kind);
  if (o.trap_kind) j["kind"] = to_string(*o.trap_kind);
  if (o.at_step) j["at_step"] = *o.at_step;
  return j;
}

ordered_json expectation_json(const Expectation& e) {
  ordered_json j;
  j["outcome"] = to_string(e.kind);
  if (e.trap_kind) j["kind"] = to_string(*e.trap_kind);
  if (e.at_step) j["at_step"] = *e.at_step;
  return j;
}

}  // namespace

RunReport run_scenario(const Scenario& scenario, const RunOptions& opts) {
  Simulation sim(scenario, opts);
  return sim.run();
}

std::string run_and_dump(const Scenario& scenario, const RunOptions& opts) {
  Simulation sim(scenario, opts);
  sim.run();
  return sim.dump();
}

std::string RunReport::to_json(bool with_timestamp) const {
  ordered_json j;
  j["schema"] = 1;
  j["name"] = name;
  j["verdict"] = verdict;
  j["observed"] = observed_json(observed);
  j["expected"] = expectation_json(expected);
  if (!error_message.empty()) j["error"] = error_message;
  j["counters"] = {
      {"cancelled_stores", cancelled_stores},
      {"revoked", revoked},
      {"shadow_bytes", shadow_bytes},
      {"double_frees", double_frees},
  };
  j["alloc"] = {
      {"live_bytes", alloc.live_bytes},
      {"quarantine_bytes", alloc.quarantine_bytes},
      {"sweeps_triggered", alloc.sweeps_triggered},
      {"double_frees", alloc.double_frees},
      {"version_flips", alloc.version_flips},
  };
  j["sweeps"] = ordered_json::array();
  for (const auto& s : sweeps) {
    j["sweeps"].push_back({{"epoch", s.epoch},
                           {"caps_examined", s.caps_examined},
                           {"caps_revoked", s.caps_revoked},
                           {"words_probed", s.words_probed},
                           {"shadow_bytes", s.shadow_bytes}});
  }
  if (cache) {
    auto level = [](const LevelStats& st) {
      return ordered_json{{"hits", st.hits},
                          {"misses", st.misses},
                          {"writebacks", st.writebacks},
                          {"dram_bytes", st.dram_bytes}};
    };
    j["cache"] = {{"l1", level(cache->l1)}, {"llc", level(cache->llc)}};
  }
  if (!notes.empty()) j["notes"] = notes;
  if (with_timestamp) j["timestamp"] = now_iso8601();
  return j.dump(2);
}

std::string RunReport::csv_header() {
  return "name,verdict,outcome,trap_kind,at_step,cancelled_stores,revoked,"
         "shadow_bytes,double_frees";
}

std::string RunReport::to_csv_row() const {
  std::string row = name + "," + verdict + "," + to_string(observed.kind) +
                    ",";
  row += observed.trap_kind ? to_string(*observed.trap_kind) : "";
  row += ",";
  row += observed.at_step ? std::to_string(*observed.at_step) : "";
  row += "," + std::to_string(cancelled_stores) + "," +
         std::to_string(revoked) + "," + std::to_string(shadow_bytes) + "," +
         std::to_string(double_frees);
  return row;
}

}  // namespace poisoncap
