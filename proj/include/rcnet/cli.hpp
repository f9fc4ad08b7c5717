#pragma once

// Command-line harness: fixtures, forward passes, check suites, counting and
// the shift benchmark. Every subcommand emits one RunReport JSON document.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rcnet/report.hpp"

namespace rcnet::cli {

struct Options {
  std::string config_path;
  std::string out_path;
  std::optional<std::uint64_t> seed;
  bool paper_width = false;
  std::vector<std::string> checks;
  int reps = 10;
  std::string fixture;
  std::string neck;
};

inline constexpr int kPaperWidth = 256;

inline NeckConfig resolve_config(const Options& o) {
  NeckConfig cfg = o.config_path.empty() ? NeckConfig{} : load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.paper_width) cfg.channels = kPaperWidth;
  cfg.validate();
  return cfg;
}

template <class F>
std::int64_t time_ns(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start)
      .count();
}

inline void add_digests(RunReport& r, const std::string& prefix, const FeaturePyramid& p,
                        const std::string& whole) {
  for (const auto& [level, t] : p) r.digests[prefix + std::to_string(level)] = hex_digest(digest(t));
  r.digests[whole] = hex_digest(digest(p));
}

inline FeaturePyramid load_or_make_inputs(const Options& o, const NeckConfig& cfg, const NeckParams& params) {
  if (o.fixture.empty()) return fixtures::make_inputs(cfg, params.stem);
  auto pyr = fpz::load_pyramid(o.fixture).pyramid;
  pyr.require_levels(cfg.l_min, cfg.l_max);
  for (int l = cfg.l_min; l <= cfg.l_max; ++l)
    if (pyr.at(l).dim(1) != cfg.input_channels(l))
      throw ConfigError("fixture level " + std::to_string(l) + " has " + std::to_string(pyr.at(l).dim(1)) +
                        " channels, config expects " + std::to_string(cfg.input_channels(l)));
  return pyr;
}

inline RunReport run_gen_fixtures(const Options& o) {
  const NeckConfig cfg = resolve_config(o);
  RunReport r{"gen-fixtures", cfg};
  ParamStore store(cfg.seed);
  const auto stem = fixtures::StemParams::make(store, cfg);
  FeaturePyramid inputs;
  r.timings_ns["generate"] = time_ns([&] { inputs = fixtures::make_inputs(cfg, stem); });
  const std::string path = o.fixture.empty() ? "fixtures.fpz" : o.fixture;
  fpz::save_pyramid(path, inputs, {{"config", cfg}});
  add_digests(r, "C", inputs, "inputs");
  std::vector<checks::NamedCheck> suite{{"fpz1_roundtrip", [&] {
    const bool ok = bitwise_equal(fpz::load_pyramid(path).pyramid, inputs);
    return checks::verdict(ok, ok ? 0 : 1, 0, path);
  }}};
  r.add_checks(checks::run(suite, o.checks));
  return r;
}

inline RunReport run_forward(const Options& o) {
  const NeckConfig cfg = resolve_config(o);
  const NeckKind kind = parse_neck(o.neck);
  RunReport r{"forward " + o.neck, cfg};
  ParamStore store(cfg.seed);
  const auto params = NeckParams::make(store, cfg);
  const auto inputs = load_or_make_inputs(o, cfg, params);
  FeaturePyramid out;
  r.timings_ns["forward"] = time_ns([&] { out = neck_forward(kind, inputs, params); });
  add_digests(r, "C", inputs, "inputs");
  add_digests(r, "P", out, "output");
  std::vector<checks::NamedCheck> suite{{"output_shapes", [&] {
    int bad = 0;
    for (int l = cfg.l_min; l <= cfg.l_max; ++l) {
      const auto res = cfg.resolution(l);
      if (!out.contains(l) || out.at(l).shape() != Shape{cfg.batch, cfg.channels, res[0], res[1]}) ++bad;
    }
    return checks::verdict(bad == 0, bad, 0, "levels with unexpected shape");
  }}};
  r.add_checks(checks::run(suite, o.checks));
  return r;
}

inline RunReport run_grad_check(const Options& o) {
  const NeckConfig base = resolve_config(o);
  const NeckConfig tiny = checks::tiny_config(base.seed);
  RunReport r{"grad-check", tiny};
  r.timings_ns["total"] = time_ns([&] { r.add_checks(checks::run(checks::gradient_suite(base.seed), o.checks)); });
  return r;
}

inline RunReport run_invariants(const Options& o) {
  const NeckConfig cfg = resolve_config(o);
  RunReport r{"invariants", cfg};
  r.timings_ns["total"] = time_ns([&] { r.add_checks(checks::run(checks::invariant_suite(cfg, 100), o.checks)); });
  return r;
}

/// Stem, FPN baseline and RevFP+CSN on zero-filled activations; only
/// shapes, parameters and MACs matter.
inline CountReport count_all(const NeckConfig& cfg) {
  ParamStore store(cfg.seed);
  const auto params = NeckParams::make(store, cfg);
  CountReport report;
  OpCounter counter(report, /*skip_compute=*/true);
  const auto inputs = fixtures::make_inputs(cfg, params.stem);
  (void)fpn::fpn_forward(inputs, params.fpn);
  (void)rcnet_forward(inputs, params);
  return report;
}

inline RunReport run_count(const Options& o) {
  const NeckConfig cfg = resolve_config(o);
  RunReport r{"count", cfg};
  CountReport counts;
  r.timings_ns["count"] = time_ns([&] { counts = count_all(cfg); });
  r.counts = counts;

  std::vector<checks::NamedCheck> suite;
  suite.push_back({"scale_shift_zero", [&] {
    const auto rows = counts.find_op("scale_shift");
    std::int64_t cost = 0;
    for (const auto* row : rows) cost += row->params + row->macs;
    return checks::verdict(!rows.empty() && cost == 0, static_cast<double>(cost), 0,
                           std::to_string(rows.size()) + " scale_shift rows");
  }});
  suite.push_back({"totals_consistent", [&] {
    CountReport::Total sum, by_module;
    for (const auto& row : counts.rows) {
      sum.params += row.params;
      sum.macs += row.macs;
    }
    for (const auto& [m, t] : counts.totals()) {
      by_module.params += t.params;
      by_module.macs += t.macs;
    }
    const bool ok = sum.params == by_module.params && sum.macs == by_module.macs;
    return checks::verdict(ok, ok ? 0 : 1, 0);
  }});
  const std::vector<std::pair<std::string, oracle::Totals>> expect{
      {"stem", oracle::stem_totals(cfg)},
      {"fpn", oracle::fpn_totals(cfg)},
      {"revfp", oracle::revfp_totals(cfg)},
      {"csn", oracle::csn_totals(cfg)}};
  for (const auto& [module, t] : expect)
    suite.push_back({"closed_form_" + module, [&, module, t] {
      const auto got = counts.total(module);
      const double off = std::abs(static_cast<double>(got.params - t.params)) +
                         std::abs(static_cast<double>(got.macs - t.macs));
      return checks::verdict(off == 0.0, off, 0,
                             "params " + std::to_string(got.params) + " vs " + std::to_string(t.params) +
                                 ", macs " + std::to_string(got.macs) + " vs " + std::to_string(t.macs));
    }});
  r.add_checks(checks::run(suite, o.checks));
  return r;
}

inline RunReport run_bench_shift(const Options& o) {
  const NeckConfig cfg = resolve_config(o);
  RunReport r{"bench-shift", cfg};
  const auto res = cfg.resolution(cfg.reference_level);
  bench::ShiftBench b;
  r.timings_ns["bench"] = time_ns([&] {
    b = bench::bench_shift(cfg.channels, cfg.shift_ratio, cfg.num_levels(), res[0], res[1], o.reps, cfg.seed);
  });
  r.bench = b;
  std::vector<checks::NamedCheck> suite{
      {"bench_equality", [&] { return checks::verdict(b.max_abs_diff <= 1e-12, b.max_abs_diff, 1e-12); }},
      {"bench_ratio", [&] {
         return checks::verdict(b.ratio > 1.0, b.ratio, 1.0, "dense median / shift median must exceed 1");
       }}};
  r.add_checks(checks::run(suite, o.checks));
  return r;
}

/// Writes `report` to `out_path` (or `out` when empty) and returns the exit
/// code: 0 if every check passed, 1 otherwise, 2 if the write failed.
inline int emit(const RunReport& report, const std::string& out_path, std::ostream& out, std::ostream& err) {
  const std::string text = report.to_json().dump(2) + "\n";
  if (out_path.empty()) {
    out << text;
  } else {
    std::ofstream f(out_path);
    f << text;
    if (!f) {
      err << "error: cannot write report to '" << out_path << "'\n";
      return 2;
    }
  }
  for (const auto& c : report.checks)
    if (!c.pass) err << "FAIL " << c.name << ": value " << c.value << ", tolerance " << c.tolerance << "\n";
  return report.pass() ? 0 : 1;
}

/// Parses `argv`, runs one subcommand and writes its report to --out or
/// `out`. Returns 0 iff every enabled check passed, 1 on a failed check,
/// 2 on usage or runtime errors.
inline int cli_run(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"RCNet neck harness", "rcnet"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::string checks_list;
  app.add_option("--config", o.config_path, "NeckConfig JSON file (defaults to the desk config)");
  app.add_option("--out", o.out_path, "Write the JSON report here instead of stdout");
  app.add_option("--seed", o.seed, "Override the config seed");
  app.add_flag("--paper-width", o.paper_width, "Use pyramid width 256");
  app.add_option("--checks", checks_list, "Comma-separated subset of checks to run");
  app.add_option("--reps", o.reps, "Benchmark repetitions (>= 10)")->check(CLI::PositiveNumber);
  app.add_option("--fixture", o.fixture, "FPZ1 file to write (gen-fixtures) or read (forward)");

  auto* gen = app.add_subcommand("gen-fixtures", "Write the seeded input pyramid as FPZ1");
  auto* fwd = app.add_subcommand("forward", "Run one neck and report output digests");
  fwd->add_option("neck", o.neck, "fpn, revfp or rcnet")->required()->check(CLI::IsMember({"fpn", "revfp", "rcnet"}));
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  auto* inv = app.add_subcommand("invariants", "Structural and oracle invariant suite");
  auto* cnt = app.add_subcommand("count", "Parameter and MAC accounting");
  auto* bsh = app.add_subcommand("bench-shift", "Time scale_shift against the dense scale conv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  std::stringstream ss(checks_list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) o.checks.push_back(item);

  RunReport report;
  try {
    if (gen->parsed()) report = run_gen_fixtures(o);
    else if (fwd->parsed()) report = run_forward(o);
    else if (grad->parsed()) report = run_grad_check(o);
    else if (inv->parsed()) report = run_invariants(o);
    else if (cnt->parsed()) report = run_count(o);
    else if (bsh->parsed()) report = run_bench_shift(o);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  return emit(report, o.out_path, out, err);
}

}  // namespace rcnet::cli
