#pragma once

// Named invariant and gradient checks shared by the CLI harness and tests.

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rcnet/gradcheck.hpp"
#include "rcnet/oracle.hpp"
#include "rcnet/rcnet.hpp"

namespace rcnet::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
  std::int64_t elapsed_ns = 0;
};

struct NamedCheck {
  std::string name;
  std::function<CheckResult()> run;
};

/// Runs `checks` in order, or only those named in `only` (unknown names
/// throw). Exceptions inside a check turn into a failed result.
inline std::vector<CheckResult> run(const std::vector<NamedCheck>& checks,
                                    const std::vector<std::string>& only = {}) {
  std::set<std::string> wanted(only.begin(), only.end());
  for (const auto& name : wanted) {
    bool known = false;
    for (const auto& c : checks) known = known || c.name == name;
    if (!known) throw ConfigError("unknown check '" + name + "'");
  }
  std::vector<CheckResult> out;
  for (const auto& c : checks) {
    if (!wanted.empty() && !wanted.contains(c.name)) continue;
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.name = c.name;
    r.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared helpers

struct Fixture {
  NeckConfig cfg;
  std::shared_ptr<ParamStore> store;
  NeckParams params;
  FeaturePyramid inputs;
};

inline Fixture make_fixture(const NeckConfig& cfg, bool csn_zero_init = true) {
  Fixture f{cfg, std::make_shared<ParamStore>(cfg.seed), {}, {}};
  f.params = NeckParams::make(*f.store, cfg, csn_zero_init);
  f.inputs = fixtures::make_inputs(cfg, f.params.stem);
  return f;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.mutable_data()) v = scale * rng.normal();
  return t;
}

/// Copy of `p` with level `level` replaced by a noisy copy.
inline FeaturePyramid perturb_level(const FeaturePyramid& p, int level, std::uint64_t seed) {
  FeaturePyramid out = p;
  Tensor t = p.at(level).clone();
  Rng rng(seed);
  for (auto& v : t.mutable_data()) v += 0.5 * rng.normal();
  out.set(level, t);
  return out;
}

/// Sets a weight head to emit exactly `value` (0 or 1) regardless of input.
inline void force_head(const ConvParams& head, double value) {
  Tensor w = head.weight;
  Tensor b = head.bias;
  for (auto& v : w.mutable_data()) v = 0.0;
  // sigmoid(+800) == 1 and sigmoid(-800) == 0 exactly in double precision.
  for (auto& v : b.mutable_data()) v = value > 0.5 ? 800.0 : -800.0;
}

inline CheckResult verdict(bool pass, double value, double tol, std::string detail = {}) {
  CheckResult r;
  r.pass = pass;
  r.value = value;
  r.tolerance = tol;
  r.detail = std::move(detail);
  return r;
}

/// Composition of oracle resizers: level `from` -> level `to`.
inline Tensor oracle_resize(const Tensor& x, int from, int to) {
  Tensor t = x;
  for (int l = from; l < to; ++l) t = oracle::maxpool2d(t, 2, 2);
  for (int l = from; l > to; --l) t = oracle::bilinear_upsample_x2(t);
  return t;
}

/// P_i + (P_i resized to level k and back): the CSN output when both
/// zero-initialised projections are zero.
inline FeaturePyramid oracle_roundtrip_sum(const FeaturePyramid& p, int k) {
  FeaturePyramid out;
  for (const auto& [level, t] : p) {
    Tensor back = oracle_resize(oracle_resize(t, level, k), k, level);
    Tensor sum = t.clone();
    auto s = sum.mutable_data();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += back.data()[i];
    out.set(level, sum);
  }
  return out;
}

inline double max_abs_diff(const FeaturePyramid& a, const FeaturePyramid& b) {
  double m = 0.0;
  for (const auto& [level, t] : a) m = std::max(m, rcnet::max_abs_diff(t, b.at(level)));
  return m;
}

/// Shifted-block routing mismatches: block j at scale s must equal source
/// channels at scale (s + offset_j) mod n, bit for bit.
inline int routing_mismatches(const Tensor& stack, const Tensor& shifted, const csn::ShiftPlan& plan) {
  const auto N = stack.dim(0), d = stack.dim(1), n = stack.dim(2), HW = stack.dim(3) * stack.dim(4);
  const auto Cout = shifted.dim(1);
  int bad = 0;
  auto src = stack.data();
  auto dst = shifted.data();
  for (std::int64_t b = 0; b < N; ++b)
    for (std::int64_t c = 0; c < Cout; ++c)
      for (std::int64_t s = 0; s < n; ++s) {
        const std::int64_t from_c = c < d ? c : c - d;
        const int off = c < d ? 0 : plan.offset_of(c - d);
        const auto from_s = ((s + off) % n + n) % n;
        for (std::int64_t p = 0; p < HW; ++p)
          if (std::bit_cast<std::uint64_t>(dst[static_cast<std::size_t>(((b * Cout + c) * n + s) * HW + p)]) !=
              std::bit_cast<std::uint64_t>(src[static_cast<std::size_t>(((b * d + from_c) * n + from_s) * HW + p)])) {
            ++bad;
            break;
          }
      }
  return bad;
}

// ---------------------------------------------------------------------------
// Individual checks

/// Scalar-weight shift sum vs brute-force circulant kernel-5 conv.
inline CheckResult shift_sum_oracle(std::uint64_t seed, int trials = 50) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Tensor x = random_tensor({1, 4, 5, 8, 8}, rng);  // tiled to d = 16
    std::array<double, 5> taps{};
    for (auto& w : taps) w = rng.normal();
    worst = std::max(worst, rcnet::max_abs_diff(csn::scalar_shift_sum(x, taps),
                                                oracle::circulant_scale_conv(x, taps)));
  }
  return verdict(worst <= 1e-12, worst, 1e-12, std::to_string(trials) + " stacks n=5 d=16 8x8");
}

/// Source level of each channel block of the shifted stack at `level`,
/// probed with a stack whose every value is its own level number. Order:
/// static block, then one entry per shift offset.
inline std::vector<int> scale_routing(const NeckConfig& cfg, int level) {
  const auto n = cfg.num_levels();
  const auto plan = csn::ShiftPlan::from_ratio(cfg.channels, cfg.shift_ratio);
  Tensor stack = Tensor::zeros({1, cfg.channels, n, 1, 1});
  auto d = stack.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = cfg.l_min + static_cast<int>(i % static_cast<std::size_t>(n));
  Tensor shifted = csn::scale_shift(stack, plan);
  const auto s = level - cfg.l_min;
  auto at = [&](std::int64_t c) { return static_cast<int>(shifted.at({0, c, s, 0, 0})); };
  std::vector<int> out{at(0)};
  for (std::size_t j = 0; j < csn::ShiftPlan::kOffsets.size(); ++j) {
    const auto first = cfg.channels + static_cast<std::int64_t>(j) * plan.per_offset;
    int src = at(first);
    for (std::int64_t c = first; c < first + plan.per_offset; ++c)
      if (at(c) != src) src = -1;
    out.push_back(src);
  }
  return out;
}

inline CheckResult shift_routing(const NeckConfig& cfg) {
  Rng rng(cfg.seed + 11);
  const auto n = cfg.num_levels();
  const auto plan = csn::ShiftPlan::from_ratio(cfg.channels, cfg.shift_ratio);
  Tensor stack = random_tensor({1, cfg.channels, n, 4, 4}, rng);
  Tensor shifted = csn::scale_shift(stack, plan);
  int bad = routing_mismatches(stack, shifted, plan);
  std::string detail = "mismatched (channel, scale) blocks";
  if (cfg.l_min == 3 && cfg.l_max == 7) {
    // Level 6 reads {4, 5, 7, 3} through offsets {-2, -1, +1, +2}.
    const std::vector<int> expect{6, 4, 5, 7, 3};
    if (scale_routing(cfg, 6) != expect) ++bad;
    detail += " plus level-6 table probe";
  }
  return verdict(bad == 0, bad, 0, detail);
}

inline CheckResult circulant_equivariance(const NeckConfig& cfg) {
  Rng rng(cfg.seed + 12);
  const auto n = cfg.num_levels();
  const auto plan = csn::ShiftPlan::from_ratio(cfg.channels, cfg.shift_ratio);
  Tensor stack = random_tensor({1, cfg.channels, n, 3, 3}, rng);
  int bad = 0;
  for (std::int64_t t = 0; t < n; ++t)
    if (!bitwise_equal(csn::scale_shift(oracle::roll_scale(stack, t), plan),
                       oracle::roll_scale(csn::scale_shift(stack, plan), t)))
      ++bad;
  return verdict(bad == 0, bad, 0, "rotations where shift and roll fail to commute");
}

/// Every shifted-in element is a distinct input element of the shifted
/// channels, and each such input element appears exactly once.
inline CheckResult shift_bijective(const NeckConfig& cfg) {
  const auto n = cfg.num_levels();
  const auto plan = csn::ShiftPlan::from_ratio(cfg.channels, cfg.shift_ratio);
  Tensor stack = Tensor::zeros({1, cfg.channels, n, 2, 2});
  auto d = stack.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i);
  Tensor shifted = csn::scale_shift(stack, plan);
  const auto block = plan.shifted_channels() * n * 4;
  std::multiset<double> in(d.begin(), d.begin() + block);
  auto sd = shifted.data();
  const auto offset = cfg.channels * n * 4;
  std::multiset<double> out(sd.begin() + offset, sd.begin() + offset + block);
  std::set<double> unique(out.begin(), out.end());
  const bool ok = in == out && unique.size() == out.size();
  return verdict(ok, ok ? 0.0 : 1.0, 0, "shifted block is a permutation of the shifted channels");
}

inline CheckResult shift_zero_cost(const Fixture& f) {
  CountReport report;
  {
    OpCounter counter(report);
    (void)rcnet_forward(f.inputs, f.params);
  }
  auto rows = report.find_op("scale_shift");
  bool ok = !rows.empty();
  double worst = 0.0;
  for (auto* r : rows) {
    ok = ok && r->params == 0 && r->macs == 0;
    worst = std::max(worst, static_cast<double>(r->params + r->macs));
  }
  return verdict(ok, worst, 0, std::to_string(rows.size()) + " scale_shift rows");
}

/// Mean FGU spatial weight is 1 for random inputs at every fusion site.
inline CheckResult fgu_mean_weight(const Fixture& f, int trials) {
  Rng rng(f.cfg.seed + 13);
  double worst = 0.0;
  const std::int64_t d = f.cfg.channels;
  for (const auto& [level, fgu] : f.params.revfp.fgu) {
    const auto r = f.cfg.resolution(level);
    for (int t = 0; t < trials; ++t) {
      Tensor fine = random_tensor({f.cfg.batch, d, r[0], r[1]}, rng);
      Tensor coarse = random_tensor({f.cfg.batch, d, r[0] / 2, r[1] / 2}, rng);
      auto g = revfp::feature_guided_upsample(fine, coarse, fgu);
      const Tensor m = ops::mean(g.weights, {2, 3});
      for (double v : m.data()) worst = std::max(worst, std::abs(v - 1.0));
    }
  }
  return verdict(worst <= 1e-12, worst, 1e-12, std::to_string(trials) + " inputs per level");
}

inline int envelope_violations(const Tensor& blend, const Tensor& a, const Tensor& b) {
  int bad = 0;
  auto x = blend.data();
  auto p = a.data();
  auto q = b.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < std::min(p[i], q[i]) || x[i] > std::max(p[i], q[i])) ++bad;
  return bad;
}

/// Pre- and post-fusion blends stay inside the elementwise operand envelope.
inline CheckResult convex_envelope(const Fixture& f, int trials = 2) {
  int bad = 0;
  for (int t = 0; t < trials; ++t) {
    FeaturePyramid c = t == 0 ? f.inputs : perturb_level(f.inputs, f.cfg.l_min, f.cfg.seed + 100 + t);
    revfp::RevfpTrace tr;
    (void)revfp::revfp_forward(c, f.params.revfp, &tr);
    for (const auto& [level, fr] : tr.pre)
      bad += envelope_violations(fr.blend, tr.lateral.at(level), tr.fgu.at(level).output);
    for (const auto& [level, fr] : tr.post)
      bad += envelope_violations(fr.blend, tr.pre_out.at(level), tr.downsampled.at(level));
  }
  return verdict(bad == 0, bad, 0, "elements outside [min, max]");
}

/// P_lmin == P'_lmin and P'_lmax == lateral(C_lmax), bitwise.
inline CheckResult boundary_rules(const Fixture& f) {
  revfp::RevfpTrace tr;
  auto out = revfp::revfp_forward(f.inputs, f.params.revfp, &tr);
  const auto& lat = f.params.revfp.lateral.at(f.cfg.l_max);
  Tensor expect_top = ops::conv2d(f.inputs.at(f.cfg.l_max), lat.weight, lat.bias);
  int bad = 0;
  if (!bitwise_equal(out.at(f.cfg.l_min), tr.pre_out.at(f.cfg.l_min))) ++bad;
  if (!bitwise_equal(tr.pre_out.at(f.cfg.l_max), expect_top)) ++bad;
  return verdict(bad == 0, bad, 0, "violated boundary rules");
}

/// FPN: perturbing C_i never changes P_j for j > i; perturbing C_lmax
/// reaches P_lmin.
inline CheckResult fpn_unidirectional(const Fixture& f) {
  const auto base = fpn::fpn_forward(f.inputs, f.params.fpn);
  int bad = 0;
  for (int i = f.cfg.l_min; i < f.cfg.l_max; ++i) {
    auto out = fpn::fpn_forward(perturb_level(f.inputs, i, f.cfg.seed + 200 + i), f.params.fpn);
    for (int j = i + 1; j <= f.cfg.l_max; ++j)
      if (!bitwise_equal(out.at(j), base.at(j))) ++bad;
  }
  auto top = fpn::fpn_forward(perturb_level(f.inputs, f.cfg.l_max, f.cfg.seed + 299), f.params.fpn);
  const bool reaches = !bitwise_equal(top.at(f.cfg.l_min), base.at(f.cfg.l_min));
  return verdict(bad == 0 && reaches, bad + (reaches ? 0 : 1), 0,
                 "low->high leaks plus missing high->low reach");
}

/// RevFP: C_lmin reaches P_lmax (bottom-up), every C_{i+1} reaches P_i
/// (local top-down), and C_lmax does not reach P_lmin (top-down is local).
inline CheckResult revfp_bidirectional(const Fixture& f) {
  const auto base = revfp::revfp_forward(f.inputs, f.params.revfp);
  int bad = 0;
  std::string detail;
  auto low = revfp::revfp_forward(perturb_level(f.inputs, f.cfg.l_min, f.cfg.seed + 300), f.params.revfp);
  if (bitwise_equal(low.at(f.cfg.l_max), base.at(f.cfg.l_max))) {
    ++bad;
    detail += "C_lmin does not reach P_lmax; ";
  }
  for (int j = f.cfg.l_min + 1; j <= f.cfg.l_max; ++j) {
    auto out = revfp::revfp_forward(perturb_level(f.inputs, j, f.cfg.seed + 300 + j), f.params.revfp);
    if (bitwise_equal(out.at(j - 1), base.at(j - 1))) {
      ++bad;
      detail += "C_" + std::to_string(j) + " does not reach P_" + std::to_string(j - 1) + "; ";
    }
    if (j == f.cfg.l_max && f.cfg.l_max - f.cfg.l_min >= 2 &&
        !bitwise_equal(out.at(f.cfg.l_min), base.at(f.cfg.l_min))) {
      ++bad;
      detail += "C_lmax reaches P_lmin; ";
    }
  }
  return verdict(bad == 0, bad, 0, detail);
}

/// With post-fusion weights forced to 1, perturbing C_j changes exactly
/// P_{j-1} and P_j.
inline CheckResult revfp_locality(const NeckConfig& cfg) {
  Fixture f = make_fixture(cfg);
  for (const auto& [level, step] : f.params.revfp.post) force_head(step.head, 1.0);
  const auto base = revfp::revfp_forward(f.inputs, f.params.revfp);
  int bad = 0;
  for (int j = cfg.l_min; j <= cfg.l_max; ++j) {
    auto out = revfp::revfp_forward(perturb_level(f.inputs, j, cfg.seed + 400 + j), f.params.revfp);
    for (int i = cfg.l_min; i <= cfg.l_max; ++i) {
      const bool changed = !bitwise_equal(out.at(i), base.at(i));
      const bool expected = i == j || i == j - 1;
      if (changed != expected) ++bad;
    }
  }
  return verdict(bad == 0, bad, 0, "(i, j) pairs with unexpected influence");
}

/// Through CSN (random init) the top input level reaches the bottom output.
inline CheckResult csn_nonadjacent_reach(const NeckConfig& cfg) {
  Fixture f = make_fixture(cfg, /*csn_zero_init=*/false);
  const auto p = revfp::revfp_forward(f.inputs, f.params.revfp);
  const auto base = csn::csn_forward(p, f.params.csn);
  auto out = csn::csn_forward(perturb_level(p, cfg.l_max, cfg.seed + 500), f.params.csn);
  const bool csn_reach = !bitwise_equal(out.at(cfg.l_min), base.at(cfg.l_min));
  const auto full = rcnet_forward(f.inputs, f.params);
  auto full2 = rcnet_forward(perturb_level(f.inputs, cfg.l_max, cfg.seed + 501), f.params);
  const bool neck_reach = !bitwise_equal(full2.at(cfg.l_min), full.at(cfg.l_min));
  const int bad = (csn_reach ? 0 : 1) + (neck_reach ? 0 : 1);
  return verdict(bad == 0, bad, 0, "P_lmax -> CSN out_lmin and C_lmax -> RCNet out_lmin");
}

/// Zero-initialised aggregation and context are exact identities, and the
/// whole CSN reduces to P + resize round trip.
inline CheckResult zero_init_identity(const Fixture& f) {
  const auto p = revfp::revfp_forward(f.inputs, f.params.revfp);
  csn::CsnTrace tr;
  const auto out = csn::csn_forward(p, f.params.csn, &tr);
  int bad = 0;
  if (!bitwise_equal(tr.aggregated, tr.stack)) ++bad;
  if (!bitwise_equal(tr.context, tr.aggregated)) ++bad;
  const double diff = max_abs_diff(out, oracle_roundtrip_sum(p, f.params.csn.reference_level));
  const bool ok = bad == 0 && diff <= 1e-12;
  return verdict(ok, std::max(diff, static_cast<double>(bad)), 1e-12,
                 "identity failures: " + std::to_string(bad));
}

/// Both context reweightings have mean exactly 1 along the normalised axes.
inline CheckResult context_softmax_mean(const NeckConfig& cfg) {
  Fixture f = make_fixture(cfg, /*csn_zero_init=*/false);
  csn::CsnTrace tr;
  (void)csn::csn_forward(revfp::revfp_forward(f.inputs, f.params.revfp), f.params.csn, &tr);
  double worst = 0.0;
  const Tensor scale_mean = ops::mean(tr.dual.scale_weights, {2});
  const Tensor spatial_mean = ops::mean(tr.dual.spatial_weights, {3, 4});
  for (double v : scale_mean.data()) worst = std::max(worst, std::abs(v - 1.0));
  for (double v : spatial_mean.data()) worst = std::max(worst, std::abs(v - 1.0));
  return verdict(worst <= 1e-12, worst, 1e-12);
}

inline CheckResult determinism(const Fixture& f) {
  Fixture again = make_fixture(f.cfg);
  int bad = 0;
  if (!bitwise_equal(fixtures::synth_backbone(f.cfg), fixtures::synth_backbone(again.cfg))) ++bad;
  if (digest(rcnet_forward(f.inputs, f.params)) != digest(rcnet_forward(again.inputs, again.params))) ++bad;
  return verdict(bad == 0, bad, 0, "non-reproducible outputs");
}

inline CheckResult fpz_roundtrip(const Fixture& f) {
  const auto decoded = fpz::decode(fpz::encode(f.inputs, {{"seed", f.cfg.seed}}));
  const bool ok = bitwise_equal(decoded.pyramid, f.inputs);
  return verdict(ok, ok ? 0 : 1, 0);
}

/// Counted parameters and MACs per module equal the closed-form totals.
inline CheckResult count_closed_form(const Fixture& f) {
  CountReport report;
  {
    OpCounter counter(report, /*skip_compute=*/true);
    auto c = fixtures::make_inputs(f.cfg, f.params.stem);
    (void)fpn::fpn_forward(c, f.params.fpn);
    (void)rcnet_forward(c, f.params);
  }
  const std::vector<std::pair<std::string, oracle::Totals>> expect{
      {"stem", oracle::stem_totals(f.cfg)},
      {"fpn", oracle::fpn_totals(f.cfg)},
      {"revfp", oracle::revfp_totals(f.cfg)},
      {"csn", oracle::csn_totals(f.cfg)}};
  double off = 0.0;
  std::string detail;
  for (const auto& [module, t] : expect) {
    const auto got = report.total(module);
    off += std::abs(static_cast<double>(got.params - t.params)) +
           std::abs(static_cast<double>(got.macs - t.macs));
    detail += module + " " + std::to_string(got.params) + "/" + std::to_string(t.params) + "; ";
  }
  return verdict(off == 0.0, off, 0, detail);
}

/// The invariant suite for one configuration.
inline std::vector<NamedCheck> invariant_suite(const NeckConfig& cfg, int fgu_trials = 10) {
  auto f = std::make_shared<Fixture>(make_fixture(cfg));
  return {
      {"shift_sum_oracle", [=] { return shift_sum_oracle(cfg.seed + 10); }},
      {"shift_routing", [=] { return shift_routing(cfg); }},
      {"circulant_equivariance", [=] { return circulant_equivariance(cfg); }},
      {"shift_bijective", [=] { return shift_bijective(cfg); }},
      {"shift_zero_cost", [=] { return shift_zero_cost(*f); }},
      {"fgu_mean_weight", [=] { return fgu_mean_weight(*f, fgu_trials); }},
      {"convex_envelope", [=] { return convex_envelope(*f); }},
      {"boundary_rules", [=] { return boundary_rules(*f); }},
      {"fpn_unidirectional", [=] { return fpn_unidirectional(*f); }},
      {"revfp_bidirectional", [=] { return revfp_bidirectional(*f); }},
      {"revfp_locality", [=] { return revfp_locality(cfg); }},
      {"csn_nonadjacent_reach", [=] { return csn_nonadjacent_reach(cfg); }},
      {"zero_init_identity", [=] { return zero_init_identity(*f); }},
      {"context_softmax_mean", [=] { return context_softmax_mean(cfg); }},
      {"determinism", [=] { return determinism(*f); }},
      {"fpz1_roundtrip", [=] { return fpz_roundtrip(*f); }},
      {"count_closed_form", [=] { return count_closed_form(*f); }},
  };
}

// ---------------------------------------------------------------------------
// Gradient suite

/// Tiny end-to-end configuration: d=8, levels 3-7, 16x16 base. Batch 2 keeps
/// the 1x1 top level normalisable.
inline NeckConfig tiny_config(std::uint64_t seed) {
  NeckConfig cfg;
  cfg.channels = 8;
  cfg.backbone_channels = {4, 6, 8};
  cfg.shift_ratio = 2;
  cfg.base_resolution = {16, 16};
  cfg.batch = 2;
  cfg.seed = seed;
  return cfg;
}

inline CheckResult from_grad(const gradcheck::Result& g) {
  return verdict(g.pass, g.max_error, 1e-4,
                 std::to_string(g.checked) + " entries, worst " + g.worst);
}

inline std::vector<NamedCheck> gradient_suite(std::uint64_t seed) {
  using gradcheck::check;
  auto rnd = [seed](Shape s, std::uint64_t salt) {
    Rng rng(seed * 7919 + salt);
    return random_tensor(std::move(s), rng);
  };
  auto proj = [seed](std::uint64_t salt) {
    return std::make_shared<gradcheck::RandomProjection>(seed + salt);
  };
  std::vector<NamedCheck> out;
  auto unary = [&](const std::string& name, Shape shape, std::function<Tensor(const Tensor&)> f,
                   std::uint64_t salt) {
    out.push_back({"grad_" + name, [=] {
                     Tensor x = rnd(shape, salt);
                     auto p = proj(salt);
                     return from_grad(check(name, [=] { return (*p)({f(x)}); }, {x}));
                   }});
  };
  auto binary = [&](const std::string& name, Shape sa, Shape sb,
                    std::function<Tensor(const Tensor&, const Tensor&)> f, std::uint64_t salt) {
    out.push_back({"grad_" + name, [=] {
                     Tensor a = rnd(sa, salt);
                     Tensor b = rnd(sb, salt + 1);
                     auto p = proj(salt);
                     return from_grad(check(name, [=] { return (*p)({f(a, b)}); }, {a, b}));
                   }});
  };

  out.push_back({"grad_conv2d", [=] {
                   Tensor x = rnd({1, 2, 5, 5}, 1), w = rnd({3, 2, 3, 3}, 2), b = rnd({3}, 3);
                   auto p = proj(1);
                   return from_grad(check("conv2d", [=] {
                     return (*p)({ops::conv2d(x, w, b, 1, 1), ops::conv2d(x, w, b, 2, 1)});
                   }, {x, w, b}));
                 }});
  out.push_back({"grad_pointwise_conv", [=] {
                   Tensor x = rnd({2, 3, 2, 2, 3}, 4), w = rnd({4, 3}, 5), b = rnd({4}, 6);
                   auto p = proj(4);
                   return from_grad(check("pointwise_conv", [=] { return (*p)({ops::pointwise_conv(x, w, b)}); },
                                          {x, w, b}));
                 }});
  unary("bilinear_upsample_x2", {1, 2, 3, 4}, [](const Tensor& x) { return ops::bilinear_upsample_x2(x); }, 7);
  unary("maxpool2d", {1, 3, 4, 4}, [](const Tensor& x) { return ops::maxpool2d(x, 2, 2); }, 8);
  unary("global_avg_pool", {2, 3, 3, 5}, [](const Tensor& x) { return ops::global_avg_pool(x); }, 9);
  unary("softmax", {2, 2, 3, 4}, [](const Tensor& x) { return ops::softmax(x, {2, 3}); }, 10);
  unary("mean", {2, 3, 4, 2, 2}, [](const Tensor& x) { return ops::mean(x, {2}); }, 11);
  unary("sigmoid", {3, 5}, [](const Tensor& x) { return ops::sigmoid(x); }, 12);
  unary("relu", {4, 6}, [](const Tensor& x) { return ops::relu(x); }, 13);
  unary("scale", {2, 3}, [](const Tensor& x) { return ops::scale(x, -1.7); }, 14);
  unary("reshape", {2, 6}, [](const Tensor& x) { return ops::reshape(x, {3, 4}); }, 15);
  unary("slice", {2, 5, 3}, [](const Tensor& x) { return ops::slice(x, 1, 1, 3); }, 16);
  unary("broadcast_to", {3, 1}, [](const Tensor& x) { return ops::broadcast_to(x, {2, 3, 4}); }, 17);
  binary("add", {2, 3, 4}, {3, 1}, [](const Tensor& a, const Tensor& b) { return ops::add(a, b); }, 18);
  binary("sub", {2, 3, 4}, {1, 4}, [](const Tensor& a, const Tensor& b) { return ops::sub(a, b); }, 20);
  binary("mul", {2, 1, 4}, {2, 3, 1}, [](const Tensor& a, const Tensor& b) { return ops::mul(a, b); }, 22);
  binary("concat", {1, 2, 3, 3}, {1, 3, 3, 3},
         [](const Tensor& a, const Tensor& b) { return ops::concat({a, b}, 1); }, 24);
  out.push_back({"grad_channel_norm", [=] {
                   Tensor x = rnd({2, 3, 3, 3}, 26), g = rnd({3}, 27), b = rnd({3}, 28);
                   auto p = proj(26);
                   return from_grad(check("channel_norm", [=] { return (*p)({ops::channel_norm(x, g, b, 1e-5)}); },
                                          {x, g, b}));
                 }});
  out.push_back({"grad_convex_blend", [=] {
                   Rng rng(seed + 29);
                   Tensor w = Tensor::zeros({2, 1, 1, 1});
                   for (auto& v : w.mutable_data()) v = rng.uniform(0.1, 0.9);
                   Tensor a = rnd({2, 3, 2, 2}, 30), b = rnd({2, 3, 2, 2}, 31);
                   auto p = proj(29);
                   return from_grad(check("convex_blend", [=] { return (*p)({ops::convex_blend(w, a, b)}); },
                                          {w, a, b}));
                 }});
  out.push_back({"grad_scale_shift", [=] {
                   Tensor s = rnd({1, 8, 5, 2, 2}, 32);
                   auto p = proj(32);
                   const auto plan = csn::ShiftPlan::from_ratio(8, 2);
                   return from_grad(check("scale_shift", [=] { return (*p)({csn::scale_shift(s, plan)}); }, {s}));
                 }});
  out.push_back({"grad_feature_guided_upsample", [=] {
                   ParamStore store(seed);
                   revfp::FguParams fgu{ConvParams::make(store, "fgu/conv", 8, 1, 3),
                                        store.add("fgu/temperature", {1}, init::Constant{1.3})};
                   Tensor fine = rnd({2, 4, 4, 4}, 33), coarse = rnd({2, 4, 2, 2}, 34);
                   auto p = proj(33);
                   return from_grad(check("feature_guided_upsample", [=] {
                     return (*p)({revfp::feature_guided_upsample(fine, coarse, fgu).output});
                   }, {fine, coarse, fgu.conv.weight, fgu.conv.bias, fgu.temperature}));
                 }});
  out.push_back({"grad_revfp_csn_end_to_end", [=] {
                   const NeckConfig cfg = tiny_config(seed);
                   auto f = std::make_shared<Fixture>(make_fixture(cfg, /*csn_zero_init=*/false));
                   std::vector<Tensor> leaves = f->store->tensors("revfp/");
                   for (auto& t : f->store->tensors("csn/")) leaves.push_back(t);
                   for (const auto& [level, t] : f->inputs) leaves.push_back(t.clone());
                   // Inputs are cloned leaves; rebuild the pyramid over them.
                   FeaturePyramid inputs;
                   std::size_t k = leaves.size() - f->inputs.size();
                   for (const auto& [level, t] : f->inputs) inputs.set(level, leaves[k++]);
                   auto p = proj(35);
                   gradcheck::Options opt;
                   opt.max_per_tensor = 6;
                   opt.seed = seed;
                   return from_grad(check("revfp_csn_end_to_end", [=] {
                     auto out = rcnet_forward(inputs, f->params);
                     std::vector<Tensor> outs;
                     for (const auto& [level, t] : out) outs.push_back(t);
                     return (*p)(outs);
                   }, leaves, opt));
                 }});
  return out;
}

}  // namespace rcnet::checks
