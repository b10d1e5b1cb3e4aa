#include "apfl/privacy/privacy.hpp"

#include <cmath>
#include <limits>

#include "apfl/error.hpp"

namespace apfl {

ClipKind parse_clip_kind(const std::string& name) {
  if (name == "l1") return ClipKind::l1;
  if (name == "l2") return ClipKind::l2;
  fail(Errc::config_error, "unknown clip_kind '" + name + "'");
}

void PrivacyConfig::validate() const {
  if (!(epsilon > 0.0)) fail(Errc::config_error, "epsilon must be > 0");
  if (!(clip_norm > 0.0)) fail(Errc::config_error, "clip_norm must be > 0");
  if (enabled && std::isfinite(epsilon) && !std::isfinite(clip_norm))
    fail(Errc::config_error, "finite epsilon needs a finite clip_norm (noise scale is clip_norm / epsilon)");
}

double PrivacyConfig::laplace_scale() const {
  if (std::isinf(epsilon)) return 0.0;
  return clip_norm / epsilon;
}

double clip_norm_of(const ParameterSet& p, ClipKind kind) {
  const Norms n = norms(p);
  return kind == ClipKind::l1 ? n.l1 : n.l2;
}

ParameterSet clip(const ParameterSet& delta, double clip_norm, ClipKind kind) {
  if (!(clip_norm > 0.0)) fail(Errc::invalid_argument, "clip norm must be > 0");
  const double norm = clip_norm_of(delta, kind);
  if (norm <= clip_norm) return delta;
  double factor = clip_norm / norm;
  ParameterSet out = scale(delta, factor);
  // f32 rounding can leave the scaled norm a few ulps above the bound.
  // Shrink geometrically from one ulp so the overshoot stays tiny.
  double shrink = std::numeric_limits<double>::epsilon();
  for (int i = 0; i < 64 && clip_norm_of(out, kind) > clip_norm; ++i) {
    factor *= 1.0 - shrink;
    shrink *= 2.0;
    out = scale(delta, factor);
  }
  return out;
}

double sample_laplace(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (;;) {
    const double v = u(rng);
    const double tail = 1.0 - 2.0 * std::abs(v);
    if (tail <= 0.0) continue;
    return -scale * std::copysign(1.0, v) * std::log(tail);
  }
}

ParameterSet perturb(const ParameterSet& delta, const PrivacyConfig& cfg, std::mt19937_64& rng) {
  if (std::isinf(cfg.epsilon)) return delta;
  const double norm = clip_norm_of(delta, cfg.clip_kind);
  if (norm > cfg.clip_norm * (1.0 + 1e-9))
    fail(Errc::not_clipped, "update norm " + std::to_string(norm) + " exceeds clip norm " + std::to_string(cfg.clip_norm));
  const double b = cfg.laplace_scale();
  return map_elements(delta, [&](double x) { return x + sample_laplace(rng, b); });
}

ParameterSet privatize(const ParameterSet& p, const PrivacyConfig& cfg, std::mt19937_64& rng) {
  if (!cfg.enabled) return p;
  cfg.validate();
  ParameterSet clipped = std::isinf(cfg.clip_norm) ? p : clip(p, cfg.clip_norm, cfg.clip_kind);
  return perturb(clipped, cfg, rng);
}

}  // namespace apfl
