#pragma once

#include <limits>
#include <random>

#include "apfl/core/params.hpp"

namespace apfl {

enum class ClipKind { l1, l2 };

ClipKind parse_clip_kind(const std::string& name);

/// Output perturbation of a transmitted update: clip to norm C, then add
/// i.i.d. Laplace(0, C / epsilon) noise per coordinate.
struct PrivacyConfig {
  bool enabled = false;
  double epsilon = std::numeric_limits<double>::infinity();
  double clip_norm = std::numeric_limits<double>::infinity();
  ClipKind clip_kind = ClipKind::l1;

  void validate() const;
  double laplace_scale() const;
};

double clip_norm_of(const ParameterSet& p, ClipKind kind);

ParameterSet clip(const ParameterSet& delta, double clip_norm, ClipKind kind);

double sample_laplace(std::mt19937_64& rng, double scale);

ParameterSet perturb(const ParameterSet& delta, const PrivacyConfig& cfg, std::mt19937_64& rng);

/// clip then perturb; identity when disabled.
ParameterSet privatize(const ParameterSet& p, const PrivacyConfig& cfg, std::mt19937_64& rng);

}  // namespace apfl
