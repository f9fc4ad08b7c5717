#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rcnet {

/// One executed operator: where it ran and what it cost.
struct CountRow {
  std::string name;    // scope path + op kind, e.g. "revfp/l3/pre/conv2d"
  std::string module;  // first scope component
  std::string op;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CountReport {
  std::vector<CountRow> rows;

  struct Total {
    std::int64_t params = 0;
    std::int64_t macs = 0;
  };

  std::map<std::string, Total> totals() const {
    std::map<std::string, Total> out;
    for (const auto& r : rows) {
      auto& t = out[r.module];
      t.params += r.params;
      t.macs += r.macs;
    }
    return out;
  }

  Total total(const std::string& module) const {
    auto t = totals();
    auto it = t.find(module);
    return it == t.end() ? Total{} : it->second;
  }

  std::vector<const CountRow*> find_op(const std::string& op) const {
    std::vector<const CountRow*> out;
    for (const auto& r : rows)
      if (r.op == op) out.push_back(&r);
    return out;
  }
};

namespace detail {

struct CountState {
  CountReport* report = nullptr;
  bool skip_compute = false;
  std::vector<std::string> scope;
};

inline CountState& count_state() {
  thread_local CountState state;
  return state;
}

}  // namespace detail

/// Pushes a name onto the operator scope path for the lifetime of the guard.
/// Scopes are tracked even when no counter is active.
class CountScope {
 public:
  explicit CountScope(std::string name) {
    detail::count_state().scope.push_back(std::move(name));
  }
  ~CountScope() { detail::count_state().scope.pop_back(); }
  CountScope(const CountScope&) = delete;
  CountScope& operator=(const CountScope&) = delete;
};

/// Collects a CountRow for every op executed while alive. With
/// `skip_compute`, MAC-heavy ops return zero-filled outputs of the right
/// shape so paper-width graphs can be counted cheaply.
class OpCounter {
 public:
  explicit OpCounter(CountReport& report, bool skip_compute = false) {
    auto& s = detail::count_state();
    prev_report_ = s.report;
    prev_skip_ = s.skip_compute;
    s.report = &report;
    s.skip_compute = skip_compute;
  }
  ~OpCounter() {
    auto& s = detail::count_state();
    s.report = prev_report_;
    s.skip_compute = prev_skip_;
  }
  OpCounter(const OpCounter&) = delete;
  OpCounter& operator=(const OpCounter&) = delete;

 private:
  CountReport* prev_report_;
  bool prev_skip_;
};

inline bool counting_only() { return detail::count_state().skip_compute; }

inline void record_op(const std::string& op, std::int64_t params,
                      std::int64_t macs) {
  auto& s = detail::count_state();
  if (!s.report) return;
  CountRow row;
  for (const auto& part : s.scope) row.name += part + "/";
  row.name += op;
  row.module = s.scope.empty() ? std::string("(root)") : s.scope.front();
  row.op = op;
  row.params = params;
  row.macs = macs;
  s.report->rows.push_back(std::move(row));
}

}  // namespace rcnet
