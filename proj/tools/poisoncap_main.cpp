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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "poisoncap/runner.hpp"
#include "poisoncap/workload.hpp"

namespace fs = std::filesystem;
using namespace poisoncap;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitMismatch = 1;
constexpr int kExitUsage = 2;

struct CommonFlags {
  std::string mode;
  std::string revoker;
  std::string store;
  std::string uninit;
  std::uint64_t seed = 1;
  std::uint64_t ops = 500;
  std::string geometry = "desk";
  std::string out;
  std::string format = "json";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--mode", flags.mode, "semantics preset: strict|hardware|legacy")
      ->check(CLI::IsMember({"strict", "hardware", "legacy"}));
  cmd->add_option("--revoker", flags.revoker, "revoker: poison|shadow|none")
      ->check(CLI::IsMember({"poison", "shadow", "none"}));
  cmd->add_option("--store", flags.store, "uaf store behaviour: trap|cancel")
      ->check(CLI::IsMember({"trap", "cancel"}));
  cmd->add_option("--uninit", flags.uninit, "uninit read behaviour: trap|zero")
      ->check(CLI::IsMember({"trap", "zero"}));
  cmd->add_option("--seed", flags.seed, "workload seed")
      ->envname("POISONCAP_SEED");
  cmd->add_option("--ops", flags.ops, "workload operation count");
  cmd->add_option("--geometry", flags.geometry, "cache geometry: paper|desk")
      ->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--out", flags.out, "write output to file instead of stdout");
  cmd->add_option("--format", flags.format, "output format: json|csv")
      ->check(CLI::IsMember({"json", "csv"}));
}

RunOptions options_from(const CommonFlags& flags) {
  RunOptions opts;
  if (!flags.revoker.empty()) {
    if (flags.revoker == "poison") opts.revoker_override = RevokerChoice::kPoison;
    if (flags.revoker == "shadow") opts.revoker_override = RevokerChoice::kShadow;
    if (flags.revoker == "none") opts.revoker_override = RevokerChoice::kNone;
  }
  SemanticsConfig semantics = SemanticsConfig::strict();
  bool any = false;
  if (!flags.mode.empty()) {
    any = true;
    if (flags.mode == "strict") semantics = SemanticsConfig::strict();
    if (flags.mode == "hardware") semantics = SemanticsConfig::hardware();
    if (flags.mode == "legacy") semantics = SemanticsConfig::legacy();
  }
  if (!flags.store.empty()) {
    any = true;
    semantics.uaf_store = flags.store == "trap"
                              ? SemanticsConfig::UafStore::kTrap
                              : SemanticsConfig::UafStore::kCancel;
  }
  if (!flags.uninit.empty()) {
    any = true;
    semantics.uninit_read = flags.uninit == "trap"
                                ? SemanticsConfig::UninitRead::kTrap
                                : SemanticsConfig::UninitRead::kZero;
  }
  if (any) opts.semantics_override = semantics;
  return opts;
}

void write_output(const CommonFlags& flags, const std::string& text) {
  if (flags.out.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(flags.out);
  out << text << "\n";
}

std::vector<fs::path> collect_scenarios(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_run(const std::string& file, const CommonFlags& flags) {
  auto scenario = load_scenario_file(file);
  if (!scenario.ok()) {
    std::cerr << "parse error: " << scenario.error().message << " at "
              << scenario.error().where << "\n";
    return kExitUsage;
  }
  RunReport report = run_scenario(scenario.value(), options_from(flags));
  if (flags.format == "csv") {
    write_output(flags, RunReport::csv_header() + "\n" + report.to_csv_row());
  } else {
    write_output(flags, report.to_json());
  }
  return report.passed() ? kExitPass : kExitMismatch;
}

int cmd_corpus(const std::string& dir, const CommonFlags& flags) {
  std::vector<fs::path> files;
  try {
    files = collect_scenarios(dir);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "cannot read corpus directory: " << e.what() << "\n";
    return kExitUsage;
  }
  if (files.empty()) {
    std::cerr << "no scenarios under " << dir << "\n";
    return kExitUsage;
  }
  const RunOptions opts = options_from(flags);
  std::vector<RunReport> reports(files.size());
  std::vector<std::string> parse_errors(files.size());
  // Scenarios are independent; one simulator instance per scenario.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(files.size()); ++i) {
    auto scenario = load_scenario_file(files[static_cast<std::size_t>(i)]);
    if (!scenario.ok()) {
      parse_errors[static_cast<std::size_t>(i)] = scenario.error().message;
      continue;
    }
    reports[static_cast<std::size_t>(i)] = run_scenario(scenario.value(), opts);
  }

  std::uint64_t passed = 0, failed = 0, undetected = 0, errors = 0;
  std::ostringstream body;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!parse_errors[i].empty()) {
      ++errors;
      body << files[i].filename().string() << ": parse error: "
           << parse_errors[i] << "\n";
      continue;
    }
    const RunReport& r = reports[i];
    if (r.verdict == "pass") ++passed;
    else if (r.verdict == "undetected") ++undetected;
    else if (r.verdict == "error") ++errors;
    else ++failed;
    if (flags.format == "csv") {
      body << r.to_csv_row() << "\n";
    } else {
      body << r.verdict << "  " << r.name << "\n";
    }
  }
  std::ostringstream summary;
  summary << body.str() << "total " << files.size() << "  pass " << passed
          << "  fail " << failed << "  undetected " << undetected
          << "  error " << errors;
  write_output(flags, summary.str());
  return (failed == 0 && undetected == 0 && errors == 0) ? kExitPass
                                                         : kExitMismatch;
}

int cmd_compare(const CommonFlags& flags) {
  CompareResult result = compare_revokers(flags.seed, flags.ops);
  std::ostringstream out;
  out << (result.equal ? "equal" : "unequal") << "  sweeps=" << result.sweeps
      << "  shadow_bytes(poison)=" << result.poison_shadow_bytes
      << "  shadow_bytes(baseline)=" << result.baseline_shadow_bytes;
  if (!result.equal) out << "  divergence: " << result.divergence;
  write_output(flags, out.str());
  return result.equal ? kExitPass : kExitMismatch;
}

int cmd_cache_bench(const CommonFlags& flags, std::uint64_t seeds) {
  const CacheGeometry geom = flags.geometry == "paper"
                                 ? CacheGeometry::paper()
                                 : CacheGeometry::desk();
  std::ostringstream csv;
  csv << "workload,policy,level,hits,misses,writebacks,dram_bytes\n";
  auto emit = [&csv](const std::string& workload, const std::string& policy,
                     const CacheStats& stats) {
    csv << workload << "," << policy << ",l1," << stats.l1.hits << ","
        << stats.l1.misses << "," << stats.l1.writebacks << ","
        << stats.l1.dram_bytes << "\n";
    csv << workload << "," << policy << ",llc," << stats.llc.hits << ","
        << stats.llc.misses << "," << stats.llc.writebacks << ","
        << stats.llc.dram_bytes << "\n";
  };
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = flags.seed + s;
    const std::string name = "churn_seed_" + std::to_string(seed);
    ChurnComparison ab = run_churn_ab(seed, geom);
    emit(name, "poison_aware", ab.poison_aware);
    emit(name, "lru", ab.lru);
  }
  write_output(flags, csv.str());
  return kExitPass;
}

int cmd_dump(const std::string& file, const CommonFlags& flags) {
  auto scenario = load_scenario_file(file);
  if (!scenario.ok()) {
    std::cerr << "parse error: " << scenario.error().message << " at "
              << scenario.error().where << "\n";
    return kExitUsage;
  }
  write_output(flags, run_and_dump(scenario.value(), options_from(flags)));
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"poisoncap: tagged-capability memory simulator with poison "
               "capabilities, sweeping revocation, and a poison-aware cache "
               "model"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string run_file, corpus_dir = "corpus", dump_file;
  std::uint64_t bench_seeds = 10;

  CLI::App* run = app.add_subcommand("run", "run one scenario file");
  run->add_option("file", run_file, "scenario JSON file")->required();
  add_common(run, flags);

  CLI::App* corpus =
      app.add_subcommand("corpus", "run every scenario under a directory");
  corpus->add_option("dir", corpus_dir, "corpus directory");
  add_common(corpus, flags);

  CLI::App* compare = app.add_subcommand(
      "compare-revokers",
      "differential poison-vs-shadow revocation on a seeded workload");
  add_common(compare, flags);

  CLI::App* bench = app.add_subcommand(
      "cache-bench", "A/B cache policy comparison on churn workloads (CSV)");
  bench->add_option("--seeds", bench_seeds, "number of seeds");
  add_common(bench, flags);

  CLI::App* dump =
      app.add_subcommand("dump", "run a scenario and dump the heap words");
  dump->add_option("file", dump_file, "scenario JSON file")->required();
  add_common(dump, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  if (run->parsed()) return cmd_run(run_file, flags);
  if (corpus->parsed()) return cmd_corpus(corpus_dir, flags);
  if (compare->parsed()) return cmd_compare(flags);
  if (bench->parsed()) return cmd_cache_bench(flags, bench_seeds);
  if (dump->parsed()) return cmd_dump(dump_file, flags);
  return kExitUsage;
}
