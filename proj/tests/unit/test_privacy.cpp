#include <cmath>
#include <limits>
#include <random>

#include "apfl/privacy/privacy.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace apfl;
using apfl::testing::scalar_set;

namespace {
constexpr double inf = std::numeric_limits<double>::infinity();

PrivacyConfig laplace(double eps, double c) {
  PrivacyConfig cfg;
  cfg.enabled = true;
  cfg.epsilon = eps;
  cfg.clip_norm = c;
  return cfg;
}

double mean_abs_noise(double eps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ParameterSet zero = scalar_set("x", std::vector<double>(20000, 0.0));
  return norms(perturb(zero, laplace(eps, 1.0), rng)).l1 / 20000.0;
}
}  // namespace

TEST_CASE("clip leaves small updates alone") {
  const ParameterSet d = scalar_set("d", {0.25, -0.25});
  CHECK(clip(d, 1.0, ClipKind::l1) == d);
}

TEST_CASE("clip scales large updates onto the ball") {
  const ParameterSet d = scalar_set("d", {5.0, -5.0});
  const ParameterSet c = clip(d, 1.0, ClipKind::l1);
  CHECK(std::abs(c[0].tensor.get(0) - 0.5) <= 1e-15);
  CHECK(std::abs(norms(c).l1 - 1.0) <= 1e-12);
}

TEST_CASE("clip: post-clip norm equals min(norm, C)") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> cdist(0.1, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const DType dt = trial % 2 ? DType::f32 : DType::f64;
    const ParameterSet d = apfl::testing::random_params(rng, dt);
    const double c = cdist(rng);
    for (ClipKind k : {ClipKind::l1, ClipKind::l2}) {
      const double before = clip_norm_of(d, k);
      const double after = clip_norm_of(clip(d, c, k), k);
      CHECK(after <= c + 1e-9);
      // f32 storage can round a little below the ball
      const double tol = dt == DType::f32 ? 1e-6 * c : 1e-9;
      CHECK(std::abs(after - std::min(before, c)) <= tol);
    }
  }
}

TEST_CASE("perturb with infinite epsilon is the identity") {
  std::mt19937_64 rng(1);
  const ParameterSet d = scalar_set("d", {0.1, 0.2});
  PrivacyConfig cfg = laplace(inf, 1.0);
  CHECK(perturb(d, cfg, rng) == d);
}

TEST_CASE("Laplace mean absolute value matches the scale") {
  std::mt19937_64 rng(77);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += std::abs(sample_laplace(rng, 1.0));
  const double mean = sum / n;
  MESSAGE("empirical E|X| = " << mean);
  CHECK(std::abs(mean - 1.0) <= 0.05);
}

TEST_CASE("perturb is deterministic for a seeded stream") {
  const ParameterSet d = scalar_set("d", {0.1, -0.2, 0.05});
  std::mt19937_64 a(5), b(5);
  CHECK(perturb(d, laplace(1.0, 1.0), a) == perturb(d, laplace(1.0, 1.0), b));
}

TEST_CASE("perturb refuses an unclipped input") {
  std::mt19937_64 rng(1);
  try {
    perturb(scalar_set("d", {3.0}), laplace(1.0, 1.0), rng);
    FAIL("expected NotClipped");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::not_clipped);
  }
}

TEST_CASE("noise magnitude shrinks as epsilon grows") {
  const double n01 = mean_abs_noise(0.1, 9);
  const double n1 = mean_abs_noise(1.0, 9);
  const double n10 = mean_abs_noise(10.0, 9);
  CHECK(n01 > n1);
  CHECK(n1 > n10);
  CHECK(std::abs(n1 / n10 - 10.0) < 0.5);
}

TEST_CASE("privatize clips then perturbs") {
  std::mt19937_64 rng(4);
  const ParameterSet d = scalar_set("d", {4.0, -4.0, 2.0});
  const PrivacyConfig cfg = laplace(1.0, 1.0);
  const ParameterSet out = privatize(d, cfg, rng);
  CHECK(out != d);
  std::mt19937_64 replay(4);
  const ParameterSet pre = clip(d, 1.0, ClipKind::l1);
  CHECK(norms(pre).l1 <= 1.0 + 1e-9);
  CHECK(out == perturb(pre, cfg, replay));
  PrivacyConfig off;
  CHECK(privatize(d, off, rng) == d);
}

TEST_CASE("privacy config validation") {
  PrivacyConfig bad = laplace(-1.0, 1.0);
  CHECK_THROWS_AS(bad.validate(), Error);
  PrivacyConfig unbounded = laplace(1.0, inf);
  CHECK_THROWS_AS(unbounded.validate(), Error);
  CHECK(laplace(2.0, 1.0).laplace_scale() == 0.5);
}
