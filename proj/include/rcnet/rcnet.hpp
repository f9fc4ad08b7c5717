#pragma once

// Umbrella header: the full neck (stem + RevFP + CSN) and the FPN baseline
// built from one NeckConfig.

#include "rcnet/config.hpp"
#include "rcnet/csn.hpp"
#include "rcnet/fixtures.hpp"
#include "rcnet/fpn.hpp"
#include "rcnet/fpz.hpp"
#include "rcnet/ops.hpp"
#include "rcnet/params.hpp"
#include "rcnet/pyramid.hpp"
#include "rcnet/revfp.hpp"

namespace rcnet {

struct NeckParams {
  fixtures::StemParams stem;
  fpn::FpnParams fpn;
  revfp::RevfpParams revfp;
  csn::CsnParams csn;

  /// Every learnable tensor lives in `store`, seeded from cfg.seed.
  static NeckParams make(ParamStore& store, const NeckConfig& cfg, bool csn_zero_init = true) {
    cfg.validate();
    return {fixtures::StemParams::make(store, cfg), fpn::FpnParams::make(store, cfg),
            revfp::RevfpParams::make(store, cfg), csn::CsnParams::make(store, cfg, csn_zero_init)};
  }
};

enum class NeckKind { Fpn, Revfp, Rcnet };

inline NeckKind parse_neck(const std::string& s) {
  if (s == "fpn") return NeckKind::Fpn;
  if (s == "revfp") return NeckKind::Revfp;
  if (s == "rcnet") return NeckKind::Rcnet;
  throw ConfigError("unknown neck '" + s + "' (expected fpn, revfp or rcnet)");
}

/// RevFP followed by CSN, whose output is P_i + resized CSN slice.
inline FeaturePyramid rcnet_forward(const FeaturePyramid& c, const NeckParams& p) {
  return csn::csn_forward(revfp::revfp_forward(c, p.revfp), p.csn);
}

inline FeaturePyramid neck_forward(NeckKind kind, const FeaturePyramid& c, const NeckParams& p) {
  switch (kind) {
    case NeckKind::Fpn: return fpn::fpn_forward(c, p.fpn);
    case NeckKind::Revfp: return revfp::revfp_forward(c, p.revfp);
    case NeckKind::Rcnet: return rcnet_forward(c, p);
  }
  throw ConfigError("bad neck kind");
}

/// FNV-1a over the FPZ1 encoding (no metadata) of the pyramid.
inline std::uint64_t digest(const FeaturePyramid& p) {
  const auto bytes = fpz::encode(p);
  return fnv1a(bytes.data(), bytes.size());
}

inline std::uint64_t digest(const Tensor& t) {
  return fnv1a(t.data().data(), t.data().size() * sizeof(double));
}

}  // namespace rcnet
