#include <algorithm>
#include <cmath>
#include <random>

#include "apfl/aggregator/aggregator.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace apfl;
using apfl::testing::max_abs_diff;
using apfl::testing::random_like;
using apfl::testing::scalar_set;

namespace {

ModelUpdate full(std::string id, ParameterSet p, std::uint64_t n, std::int64_t base = 0) {
  ModelUpdate u;
  u.client_id = std::move(id);
  u.params = std::move(p);
  u.sample_count = n;
  u.local_steps = 1;
  u.base_epoch = base;
  return u;
}

ModelUpdate delta(std::string id, ParameterSet d, std::uint64_t n, std::int64_t base = 0) {
  ModelUpdate u = full(std::move(id), std::move(d), n, base);
  u.is_delta = true;
  return u;
}

double scalar(const ParameterSet& p) { return p[0].tensor.get(0); }

}  // namespace

TEST_CASE("weighted average examples") {
  const ParameterSet g = scalar_set("w", {0.0, 0.0});
  const ParameterSet P = scalar_set("w", {1.0, 2.0});
  const ParameterSet Q = scalar_set("w", {3.0, 6.0});

  AggregatorState s(g, {});
  const ModelUpdate eq[] = {full("a", P, 5), full("b", Q, 5)};
  CHECK(agg_weighted_avg(s, eq) == scalar_set("w", {2.0, 4.0}));
  CHECK(s.epoch == 1);

  AggregatorState s2(g, {});
  const ModelUpdate skew[] = {full("a", P, 1), full("b", Q, 3)};
  const ParameterSet& out = agg_weighted_avg(s2, skew);
  CHECK(std::abs(out[0].tensor.get(0) - (0.25 * 1 + 0.75 * 3)) <= 1e-15);
  CHECK(std::abs(out[0].tensor.get(1) - (0.25 * 2 + 0.75 * 6)) <= 1e-15);

  AggregatorState s3(g, {});
  const ModelUpdate one[] = {full("a", P, 9)};
  CHECK(agg_weighted_avg(s3, one) == P);

  AggregatorState s4(g, {});
  try {
    agg_weighted_avg(s4, std::span<const ModelUpdate>());
    FAIL("expected EmptyUpdateList");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_update_list);
  }
}

TEST_CASE("weighted average is convex and permutation invariant") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::uint64_t> count(1, 100);
  for (int trial = 0; trial < 30; ++trial) {
    const ParameterSet g = apfl::testing::random_params(rng, DType::f64);
    std::vector<ModelUpdate> ups;
    for (int k = 0; k < 5; ++k) ups.push_back(full("c" + std::to_string(k), random_like(rng, g), count(rng)));
    AggregatorState s(g, {});
    const ParameterSet out = agg_weighted_avg(s, ups);
    for (std::size_t e = 0; e < g.size(); ++e)
      for (std::size_t i = 0; i < g[e].tensor.size(); ++i) {
        double lo = 1e300, hi = -1e300;
        for (const auto& u : ups) {
          lo = std::min(lo, u.params[e].tensor.get(i));
          hi = std::max(hi, u.params[e].tensor.get(i));
        }
        CHECK(out[e].tensor.get(i) >= lo - 1e-12);
        CHECK(out[e].tensor.get(i) <= hi + 1e-12);
      }
    std::shuffle(ups.begin(), ups.end(), rng);
    AggregatorState s2(g, {});
    CHECK(agg_weighted_avg(s2, ups) == out);
    for (ServerOpt opt : {ServerOpt::fedavgm, ServerOpt::fedadam}) {
      AggregatorState a(g, {}), b(g, {});
      const ParameterSet ra = agg_server_opt(a, ups, opt);
      std::reverse(ups.begin(), ups.end());
      CHECK(max_abs_diff(ra, agg_server_opt(b, ups, opt)) <= 1e-12);
    }
  }
}

TEST_CASE("FedAvgM with zero momentum is the plain averaged step") {
  std::mt19937_64 rng(5);
  const ParameterSet g = apfl::testing::random_params(rng, DType::f64);
  const ModelUpdate ups[] = {full("a", random_like(rng, g), 3), full("b", random_like(rng, g), 7)};
  AggregatorHyper h;
  h.momentum = 0.0;
  AggregatorState s(g, h), plain(g, h);
  const ParameterSet viaopt = agg_server_opt(s, ups, ServerOpt::fedavgm);
  const ParameterSet avg = agg_weighted_avg(plain, ups);
  CHECK(max_abs_diff(viaopt, avg) <= 1e-12);
}

TEST_CASE("FedAdam with a zero mean delta leaves the global unchanged") {
  const ParameterSet g = scalar_set("w", {1.0, -2.0});
  const ModelUpdate ups[] = {full("a", g, 3), full("b", g, 4)};
  AggregatorState s(g, {});
  CHECK(agg_server_opt(s, ups, ServerOpt::fedadam) == g);
  CHECK(s.epoch == 1);
}

TEST_CASE("FedAdagrad scalar hand check") {
  const ParameterSet g = scalar_set("w", {0.5});
  AggregatorHyper h;
  h.server_lr = 0.1;
  h.tau = 1e-3;
  AggregatorState s(g, h);
  const ModelUpdate ups[] = {delta("a", scalar_set("w", {0.3}), 1)};
  const double expect = 0.5 + 0.1 * 0.3 / (0.3 + 1e-3);
  CHECK(std::abs(scalar(agg_server_opt(s, ups, ServerOpt::fedadagrad)) - expect) <= 1e-15);
}

TEST_CASE("FedYogi second moment moves toward the squared delta") {
  const ParameterSet g = scalar_set("w", {0.0});
  AggregatorHyper h;
  AggregatorState s(g, h);
  const ModelUpdate ups[] = {delta("a", scalar_set("w", {0.2}), 1)};
  agg_server_opt(s, ups, ServerOpt::fedyogi);
  // u starts at 0 < d^2, so u grows by (1 - beta2) d^2
  CHECK(std::abs(scalar(s.u) - 0.01 * 0.04) <= 1e-15);
  const double m = 0.1 * 0.2;
  CHECK(std::abs(scalar(s.global) - m / (std::sqrt(0.01 * 0.04) + 1e-3)) <= 1e-12);
}

TEST_CASE("FedAsync mixing") {
  const ParameterSet g = scalar_set("w", {1.0});
  AggregatorHyper h;
  h.alpha = 1.0;
  AggregatorState replace(g, h);
  CHECK(agg_async(replace, full("a", scalar_set("w", {7.0}), 1)) == scalar_set("w", {7.0}));

  AggregatorState s(g, {});
  CHECK(std::abs(scalar(agg_async(s, full("a", scalar_set("w", {3.0}), 1))) - (0.1 * 1.0 + 0.9 * 3.0)) <= 1e-15);

  CHECK(std::abs(0.9 * staleness_factor(0.5, 3) - 0.45) <= 1e-15);

  AggregatorState stale(g, {});
  for (int i = 0; i < 3; ++i) agg_async(stale, full("x", scalar_set("w", {1.0}), 1, stale.epoch));
  CHECK(stale.epoch == 3);
  const double before = scalar(stale.global);
  const double got = scalar(agg_async(stale, full("late", scalar_set("w", {2.0}), 1, 0)));
  CHECK(std::abs(got - (0.55 * before + 0.45 * 2.0)) <= 1e-15);

  AggregatorState neg(g, {});
  try {
    agg_async(neg, full("a", g, 1, 5));
    FAIL("expected NegativeStaleness");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::negative_staleness);
  }
}

TEST_CASE("FedBuff examples") {
  const ParameterSet g = scalar_set("w", {1.0, 1.0});
  AggregatorState one(g, {});
  const ModelUpdate single[] = {delta("a", scalar_set("w", {0.5, -1.0}), 1)};
  CHECK(agg_buffered(one, single) == scalar_set("w", {1.5, 0.0}));

  AggregatorState two(g, {});
  const ModelUpdate pair[] = {delta("a", scalar_set("w", {1.0, 0.0}), 1), delta("b", scalar_set("w", {0.0, 2.0}), 1)};
  CHECK(agg_buffered(two, pair) == scalar_set("w", {1.5, 2.0}));

  AggregatorState rep(g, {});
  const ModelUpdate three[] = {single[0], single[0], single[0]};
  CHECK(agg_buffered(rep, three) == scalar_set("w", {1.5, 0.0}));

  AggregatorState empty(g, {});
  CHECK_THROWS_AS(agg_buffered(empty, std::span<const ModelUpdate>()), Error);
}

TEST_CASE("full-weight updates are turned into deltas against their base version") {
  const ParameterSet g = scalar_set("w", {0.0});
  AggregatorHyper h;
  h.staleness_exp = 0.0;
  AggregatorState s(g, h);
  const ModelUpdate first[] = {full("a", scalar_set("w", {1.0}), 1, 0)};
  agg_buffered(s, first);
  CHECK(scalar(s.global) == 1.0);
  // trained from epoch 0 (value 0) to 0.5: delta 0.5 applied on top of 1.0
  const ModelUpdate late[] = {full("b", scalar_set("w", {0.5}), 1, 0)};
  CHECK(scalar(agg_buffered(s, late)) == 1.5);
}

TEST_CASE("grouped aggregation of the whole population equals FedAvg") {
  std::mt19937_64 rng(8);
  const ParameterSet g = apfl::testing::random_params(rng, DType::f64);
  const ModelUpdate ups[] = {full("a", random_like(rng, g), 10), full("b", random_like(rng, g), 30),
                             full("c", random_like(rng, g), 60)};
  AggregatorState grouped(g, {}), avg(g, {});
  CHECK(max_abs_diff(agg_group(grouped, ups, 100.0), agg_weighted_avg(avg, ups)) <= 1e-12);
}

TEST_CASE("epoch increments once per aggregation") {
  std::mt19937_64 rng(1);
  const ParameterSet g = apfl::testing::random_params(rng, DType::f32);
  const ModelUpdate ups[] = {full("a", random_like(rng, g), 1), full("b", random_like(rng, g), 2)};
  for (Strategy st : {Strategy::fedavg, Strategy::fedavgm, Strategy::fedadagrad, Strategy::fedadam,
                      Strategy::fedyogi, Strategy::fedasync}) {
    auto agg = make_aggregator(st, g);
    for (int k = 1; k <= 3; ++k) {
      if (st == Strategy::fedasync) {
        ModelUpdate u = ups[0];
        u.base_epoch = agg->epoch();
        CHECK(agg->aggregate(std::span<const ModelUpdate>(&u, 1)));
      } else {
        CHECK(agg->aggregate(ups));
      }
      CHECK(agg->epoch() == k);
    }
  }
}

TEST_CASE("FedBuff aggregator flushes every K updates and on demand") {
  const ParameterSet g = scalar_set("w", {0.0});
  AggregatorHyper h;
  h.buffer_size = 3;
  auto agg = make_aggregator(Strategy::fedbuff, g, h);
  for (int i = 0; i < 2; ++i) {
    ModelUpdate u = delta("c" + std::to_string(i), scalar_set("w", {1.0}), 1);
    CHECK_FALSE(agg->aggregate(std::span<const ModelUpdate>(&u, 1)));
  }
  CHECK(agg->epoch() == 0);
  ModelUpdate u = delta("c2", scalar_set("w", {1.0}), 1);
  CHECK(agg->aggregate(std::span<const ModelUpdate>(&u, 1)));
  CHECK(agg->epoch() == 1);
  CHECK(agg->aggregate(std::span<const ModelUpdate>(&u, 1)) == false);
  CHECK(agg->flush());
  CHECK(agg->epoch() == 2);
  CHECK_FALSE(agg->flush());
}

TEST_CASE("strategy registry") {
  CHECK(strategy_from_name("FedAvgAggregator") == Strategy::fedavg);
  CHECK(strategy_from_name("fedyogi") == Strategy::fedyogi);
  CHECK(strategy_from_name("FedCompass") == Strategy::fedcompass);
  CHECK(is_async_strategy(Strategy::fedbuff));
  CHECK_FALSE(is_async_strategy(Strategy::fedadam));
  for (const char* n : {"ICEADMMAggregator", "IIADMM", "PLFL", "AREA"}) {
    try {
      strategy_from_name(n);
      FAIL("expected NotImplemented");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::not_implemented);
    }
  }
  try {
    strategy_from_name("Nope");
    FAIL("expected UnknownStrategyName");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unknown_strategy_name);
  }
}
