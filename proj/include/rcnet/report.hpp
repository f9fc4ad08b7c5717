#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcnet/bench.hpp"
#include "rcnet/checks.hpp"
#include "rcnet/count.hpp"

namespace rcnet {

inline constexpr const char* kReportSchema = "rcnet-report/1";

inline std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// One harness run. Everything except timings and bench medians is
/// deterministic for a given command line.
struct RunReport {
  RunReport() = default;
  RunReport(std::string cmd, nlohmann::json cfg) : command(std::move(cmd)), config(std::move(cfg)) {}

  std::string command;
  nlohmann::json config;
  std::vector<checks::CheckResult> checks;
  std::map<std::string, std::int64_t> timings_ns;
  std::map<std::string, std::string> digests;
  std::optional<CountReport> counts;
  std::optional<bench::ShiftBench> bench;

  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  void add_checks(const std::vector<checks::CheckResult>& results) {
    for (const auto& r : results) {
      checks.push_back(r);
      timings_ns["check/" + r.name] = r.elapsed_ns;
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = kReportSchema;
    j["command"] = command;
    j["config"] = config;
    auto& cj = j["checks"] = nlohmann::json::object();
    for (const auto& c : checks)
      cj[c.name] = {{"pass", c.pass}, {"value", c.value}, {"tolerance", c.tolerance}, {"detail", c.detail}};
    j["timings_ns"] = timings_ns;
    j["digests"] = digests;
    if (counts) {
      auto rows = nlohmann::json::array();
      for (const auto& r : counts->rows)
        rows.push_back({{"name", r.name}, {"module", r.module}, {"op", r.op}, {"params", r.params}, {"macs", r.macs}});
      auto totals = nlohmann::json::object();
      for (const auto& [module, t] : counts->totals()) totals[module] = {{"params", t.params}, {"macs", t.macs}};
      j["counts"] = {{"rows", rows}, {"totals", totals}};
    }
    if (bench) {
      const auto& b = *bench;
      j["bench"] = {{"channels", b.channels},
                    {"scales", b.scales},
                    {"height", b.height},
                    {"width", b.width},
                    {"repetitions", b.repetitions},
                    {"shift_median_ns", b.shift_median_ns},
                    {"dense_median_ns", b.dense_median_ns},
                    {"ratio", b.ratio},
                    {"max_abs_diff", b.max_abs_diff}};
    }
    j["pass"] = pass();
    return j;
  }
};

}  // namespace rcnet
