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

#include "poisoncap/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace poisoncap {

using nlohmann::json;

std::string to_string(OpKind op) {
  switch (op) {
    case OpKind::kMalloc: return "malloc";
    case OpKind::kFree: return "free";
    case OpKind::kArenaNew: return "arena_new";
    case OpKind::kArenaMalloc: return "arena_malloc";
    case OpKind::kArenaFree: return "arena_free";
    case OpKind::kLoad: return "load";
    case OpKind::kStore: return "store";
    case OpKind::kStoreCap: return "store_cap";
    case OpKind::kLoadCap: return "load_cap";
    case OpKind::kCpoison: return "cpoison";
    case OpKind::kCgetpoison: return "cgetpoison";
    case OpKind::kSweep: return "sweep";
    case OpKind::kFlush: return "flush";
    case OpKind::kCacheNote: return "cache_note";
  }
  return "?";
}

std::string to_string(Expectation::Kind k) {
  switch (k) {
    case Expectation::Kind::kOk: return "ok";
    case Expectation::Kind::kTrap: return "trap";
    case Expectation::Kind::kCancelled: return "cancelled";
    case Expectation::Kind::kDoubleFree: return "double_free";
  }
  return "?";
}

std::string to_string(RevokerChoice r) {
  switch (r) {
    case RevokerChoice::kPoison: return "poison";
    case RevokerChoice::kShadow: return "shadow";
    case RevokerChoice::kNone: return "none";
  }
  return "?";
}

bool Scenario::has_tag(const std::string& tag) const {
  return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

namespace {

const std::unordered_map<std::string, OpKind>& op_names() {
  static const std::unordered_map<std::string, OpKind> names = {
      {"malloc", OpKind::kMalloc},
      {"free", OpKind::kFree},
      {"arena_new", OpKind::kArenaNew},
      {"arena_malloc", OpKind::kArenaMalloc},
      {"arena_free", OpKind::kArenaFree},
      {"load", OpKind::kLoad},
      {"store", OpKind::kStore},
      {"store_cap", OpKind::kStoreCap},
      {"load_cap", OpKind::kLoadCap},
      {"cpoison", OpKind::kCpoison},
      {"cgetpoison", OpKind::kCgetpoison},
      {"sweep", OpKind::kSweep},
      {"flush", OpKind::kFlush},
      {"cache_note", OpKind::kCacheNote},
  };
  return names;
}

struct ParseCtx {
  std::optional<ParseError> error;

  void fail(std::string message, std::string where) {
    if (!error) error = ParseError{std::move(message), std::move(where)};
  }
};

std::optional<TrapKind> trap_kind_from(const std::string& s) {
  if (s == "UseAfterFree") return TrapKind::kUseAfterFree;
  if (s == "UninitialisedRead") return TrapKind::kUninitialisedRead;
  if (s == "BoundsViolation") return TrapKind::kBoundsViolation;
  if (s == "PermissionViolation") return TrapKind::kPermissionViolation;
  if (s == "TagViolation") return TrapKind::kTagViolation;
  return std::nullopt;
}

std::optional<PermSet> perms_from(const json& arr, ParseCtx& ctx,
                                  const std::string& where) {
  PermSet out = PermSet::none();
  for (const auto& p : arr) {
    const std::string name = p.get<std::string>();
    if (name == "READ") out.mask |= static_cast<std::uint8_t>(Perm::kRead);
    else if (name == "WRITE") out.mask |= static_cast<std::uint8_t>(Perm::kWrite);
    else if (name == "LOAD_CAP") out.mask |= static_cast<std::uint8_t>(Perm::kLoadCap);
    else if (name == "STORE_CAP") out.mask |= static_cast<std::uint8_t>(Perm::kStoreCap);
    else if (name == "POISON") out.mask |= static_cast<std::uint8_t>(Perm::kPoison);
    else {
      ctx.fail("unknown permission '" + name + "'", where);
      return std::nullopt;
    }
  }
  return out;
}

SemanticsConfig semantics_from(const json& j, ParseCtx& ctx) {
  SemanticsConfig cfg;
  if (j.contains("mode")) {
    const std::string mode = j["mode"].get<std::string>();
    if (mode == "strict") cfg = SemanticsConfig::strict();
    else if (mode == "hardware") cfg = SemanticsConfig::hardware();
    else if (mode == "legacy") cfg = SemanticsConfig::legacy();
    else ctx.fail("unknown mode '" + mode + "'", "/config/mode");
  }
  if (j.contains("semantics")) {
    const json& s = j["semantics"];
    if (s.contains("uaf_load")) {
      cfg.uaf_load = s["uaf_load"] == "trap"
                         ? SemanticsConfig::UafLoad::kTrap
                         : SemanticsConfig::UafLoad::kSilentZero;
    }
    if (s.contains("uaf_store")) {
      cfg.uaf_store = s["uaf_store"] == "trap"
                          ? SemanticsConfig::UafStore::kTrap
                          : SemanticsConfig::UafStore::kCancel;
    }
    if (s.contains("uninit_read")) {
      cfg.uninit_read = s["uninit_read"] == "trap"
                            ? SemanticsConfig::UninitRead::kTrap
                            : SemanticsConfig::UninitRead::kZero;
    }
  }
  return cfg;
}

bool parse_step(const json& j, std::size_t index, Step& step, ParseCtx& ctx) {
  const std::string where = "/steps/" + std::to_string(index);
  if (!j.contains("op")) {
    ctx.fail("step missing 'op'", where);
    return false;
  }
  const std::string op_name = j["op"].get<std::string>();
  auto it = op_names().find(op_name);
  if (it == op_names().end()) {
    ctx.fail("unknown op '" + op_name + "'", where + "/op");
    return false;
  }
  step.op = it->second;
  if (j.contains("dst")) step.dst = j["dst"].get<std::string>();
  if (j.contains("ptr")) step.ptr = j["ptr"].get<std::string>();
  if (j.contains("src")) step.src = j["src"].get<std::string>();
  if (j.contains("arena")) step.arena = j["arena"].get<std::string>();
  if (j.contains("size")) step.size = j["size"].get<std::uint64_t>();
  if (j.contains("offset")) step.offset = j["offset"].get<std::uint64_t>();
  if (j.contains("width")) step.width = j["width"].get<unsigned>();
  if (j.contains("value")) step.value = j["value"].get<std::uint64_t>();
  if (j.contains("words")) step.words = j["words"].get<std::uint64_t>();
  if (j.contains("expect_value")) {
    step.expect_value = j["expect_value"].get<std::uint64_t>();
  }
  if (j.contains("expect_bool")) {
    step.expect_bool = j["expect_bool"].get<bool>();
  }
  if (j.contains("note")) step.note = j["note"].get<std::string>();

  const bool is_data_access =
      step.op == OpKind::kLoad || step.op == OpKind::kStore;
  if (is_data_access) {
    if (step.width != 1 && step.width != 2 && step.width != 4 &&
        step.width != 8 && step.width != 16) {
      ctx.fail("malformed width " + std::to_string(step.width), where);
      return false;
    }
    if ((step.offset % kWordBytes) + step.width > kWordBytes) {
      ctx.fail("access straddles a 16-byte word", where);
      return false;
    }
  }
  return true;
}

void validate_handles(const Scenario& sc, ParseCtx& ctx) {
  std::unordered_set<std::string> defined = {"root"};
  for (const auto& g : sc.config.genesis) defined.insert(g.name);
  std::unordered_set<std::string> arenas;
  for (std::size_t i = 0; i < sc.steps.size(); ++i) {
    const Step& s = sc.steps[i];
    const std::string where = "/steps/" + std::to_string(i);
    auto need = [&](const std::string& h, const char* field) {
      if (h.empty()) {
        ctx.fail(std::string("missing '") + field + "'", where);
      } else if (!defined.count(h)) {
        ctx.fail("undefined handle '" + h + "'", where);
      }
    };
    switch (s.op) {
      case OpKind::kMalloc:
        if (s.dst.empty()) ctx.fail("malloc needs 'dst'", where);
        defined.insert(s.dst);
        break;
      case OpKind::kArenaNew:
        if (s.dst.empty()) ctx.fail("arena_new needs 'dst'", where);
        defined.insert(s.dst);
        arenas.insert(s.dst);
        break;
      case OpKind::kArenaMalloc:
        if (s.arena.empty() || !arenas.count(s.arena)) {
          ctx.fail("undefined arena '" + s.arena + "'", where);
        }
        if (s.dst.empty()) ctx.fail("arena_malloc needs 'dst'", where);
        defined.insert(s.dst);
        break;
      case OpKind::kArenaFree:
        if (s.arena.empty() || !arenas.count(s.arena)) {
          ctx.fail("undefined arena '" + s.arena + "'", where);
        }
        need(s.ptr, "ptr");
        break;
      case OpKind::kFree:
      case OpKind::kLoad:
      case OpKind::kCpoison:
      case OpKind::kCgetpoison:
        need(s.ptr, "ptr");
        break;
      case OpKind::kStore:
        need(s.ptr, "ptr");
        break;
      case OpKind::kStoreCap:
        need(s.ptr, "ptr");
        need(s.src, "src");
        break;
      case OpKind::kLoadCap:
        need(s.ptr, "ptr");
        if (!s.dst.empty()) defined.insert(s.dst);
        break;
      case OpKind::kSweep:
      case OpKind::kFlush:
      case OpKind::kCacheNote:
        break;
    }
  }
}

}  // namespace

Result<Scenario, ParseError> parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    return ParseError{e.what(), "byte " + std::to_string(e.byte)};
  }

  ParseCtx ctx;
  Scenario sc;
  try {
    if (!j.contains("name")) return ParseError{"missing 'name'", "/"};
    sc.name = j["name"].get<std::string>();
    if (j.contains("tags")) {
      for (const auto& t : j["tags"]) sc.tags.push_back(t.get<std::string>());
    }

    if (j.contains("config")) {
      const json& c = j["config"];
      sc.config.semantics = semantics_from(c, ctx);
      if (c.contains("revoker")) {
        const std::string r = c["revoker"].get<std::string>();
        if (r == "poison") sc.config.revoker = RevokerChoice::kPoison;
        else if (r == "shadow") sc.config.revoker = RevokerChoice::kShadow;
        else if (r == "none") sc.config.revoker = RevokerChoice::kNone;
        else ctx.fail("unknown revoker '" + r + "'", "/config/revoker");
      }
      if (c.contains("cache")) sc.config.cache = c["cache"].get<bool>();
      if (c.contains("geometry")) {
        const std::string g = c["geometry"].get<std::string>();
        if (g == "paper") sc.config.cache_geometry = CacheGeometry::paper();
        else if (g == "desk") sc.config.cache_geometry = CacheGeometry::desk();
        else ctx.fail("unknown geometry '" + g + "'", "/config/geometry");
      }
      if (c.contains("memory_bytes")) {
        sc.config.memory_bytes = c["memory_bytes"].get<std::uint64_t>();
      }
      if (c.contains("heap")) {
        const json& h = c["heap"];
        if (h.contains("base")) {
          sc.config.heap.heap_bounds.base = h["base"].get<std::uint64_t>();
        }
        if (h.contains("length")) {
          sc.config.heap.heap_bounds.length =
              h["length"].get<std::uint64_t>();
        }
        if (h.contains("quarantine_threshold_pct")) {
          sc.config.heap.quarantine_threshold_pct =
              h["quarantine_threshold_pct"].get<double>();
        }
        if (h.contains("realloc_policy")) {
          const std::string p = h["realloc_policy"].get<std::string>();
          if (p == "lazy_detox") {
            sc.config.heap.realloc_policy = ReallocPolicy::kLazyDetox;
          } else if (p == "eager_zero") {
            sc.config.heap.realloc_policy = ReallocPolicy::kEagerZero;
          } else {
            ctx.fail("unknown realloc_policy '" + p + "'",
                     "/config/heap/realloc_policy");
          }
        }
        if (h.contains("fresh_poison_version")) {
          sc.config.heap.fresh_poison_version =
              h["fresh_poison_version"].get<std::uint8_t>() & 1;
        }
      }
      if (c.contains("genesis")) {
        std::size_t gi = 0;
        for (const auto& g : c["genesis"]) {
          const std::string where = "/config/genesis/" + std::to_string(gi++);
          GenesisCap cap;
          cap.name = g.at("name").get<std::string>();
          cap.bounds.base = g.at("base").get<std::uint64_t>();
          cap.bounds.length = g.at("length").get<std::uint64_t>();
          if (g.contains("perms")) {
            auto perms = perms_from(g["perms"], ctx, where + "/perms");
            if (perms) cap.perms = *perms;
          }
          if (g.contains("version")) {
            cap.version = g["version"].get<std::uint8_t>() & 1;
          }
          sc.config.genesis.push_back(cap);
        }
      }
    }

    if (!j.contains("steps") || !j["steps"].is_array()) {
      return ParseError{"missing 'steps' array", "/"};
    }
    std::size_t idx = 0;
    for (const auto& js : j["steps"]) {
      Step step;
      if (!parse_step(js, idx, step, ctx)) break;
      sc.steps.push_back(step);
      ++idx;
    }

    if (j.contains("expect")) {
      const json& e = j["expect"];
      const std::string verdict = e.at("verdict").get<std::string>();
      if (verdict == "ok") sc.expect.kind = Expectation::Kind::kOk;
      else if (verdict == "trap") sc.expect.kind = Expectation::Kind::kTrap;
      else if (verdict == "cancelled") {
        sc.expect.kind = Expectation::Kind::kCancelled;
      } else if (verdict == "double_free") {
        sc.expect.kind = Expectation::Kind::kDoubleFree;
      } else {
        ctx.fail("unknown verdict '" + verdict + "'", "/expect/verdict");
      }
      if (e.contains("kind")) {
        auto k = trap_kind_from(e["kind"].get<std::string>());
        if (!k) ctx.fail("unknown trap kind", "/expect/kind");
        sc.expect.trap_kind = k;
      }
      if (e.contains("at_step")) {
        sc.expect.at_step = e["at_step"].get<std::size_t>();
      }
    }
  } catch (const json::exception& e) {
    return ParseError{e.what(), "/"};
  }

  if (!ctx.error) validate_handles(sc, ctx);
  if (ctx.error) return *ctx.error;
  return sc;
}

Result<Scenario, ParseError> load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return ParseError{"cannot open file", path};
  std::ostringstream buf;
  buf << in.rdbuf();
  auto parsed = parse_scenario(buf.str());
  if (!parsed.ok()) {
    return ParseError{parsed.error().message, path + ":" + parsed.error().where};
  }
  return parsed;
}

}  // namespace poisoncap
