#include "apfl/aggregator/aggregator.hpp"

#include <algorithm>
#include <cmath>

#include "apfl/error.hpp"

namespace apfl {

AggregatorState::AggregatorState(ParameterSet initial, AggregatorHyper h)
    : global(std::move(initial)), hyper(h) {
  v = zeros_like(global);
  m = zeros_like(global);
  u = zeros_like(global);
  versions.emplace(0, global);
}

const ParameterSet& AggregatorState::version(std::int64_t at) const {
  auto it = versions.find(at);
  return it == versions.end() ? global : it->second;
}

void AggregatorState::commit(ParameterSet next) {
  global = std::move(next);
  ++epoch;
  versions.emplace(epoch, global);
  while (versions.size() > std::max<std::size_t>(hyper.history, 1)) versions.erase(versions.begin());
}

double staleness_factor(double staleness_exp, std::int64_t staleness) {
  return std::pow(static_cast<double>(staleness) + 1.0, -staleness_exp);
}

std::int64_t staleness_of(const AggregatorState& state, const ModelUpdate& update) {
  const std::int64_t s = state.epoch - update.base_epoch;
  if (s < 0)
    fail(Errc::negative_staleness, "update from " + update.client_id + " based on epoch " +
                                       std::to_string(update.base_epoch) + " but server is at " +
                                       std::to_string(state.epoch));
  return s;
}

ParameterSet update_delta(const AggregatorState& state, const ModelUpdate& update) {
  require_compatible(state.global, update.params, "update from " + update.client_id);
  if (update.is_delta) return update.params;
  return subtract(update.params, state.version(update.base_epoch));
}

std::vector<const ModelUpdate*> sorted_by_client(std::span<const ModelUpdate> updates) {
  std::vector<const ModelUpdate*> out;
  out.reserve(updates.size());
  for (const auto& u : updates) out.push_back(&u);
  std::stable_sort(out.begin(), out.end(),
                   [](const ModelUpdate* a, const ModelUpdate* b) { return a->client_id < b->client_id; });
  return out;
}

namespace {

std::vector<double> sample_weights(const std::vector<const ModelUpdate*>& updates) {
  double total = 0.0;
  for (const auto* u : updates) total += static_cast<double>(u->sample_count);
  if (!(total > 0.0)) fail(Errc::invalid_argument, "weighted aggregation needs a positive total sample count");
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto* u : updates) w.push_back(static_cast<double>(u->sample_count) / total);
  return w;
}

void require_nonempty(std::span<const ModelUpdate> updates) {
  if (updates.empty()) fail(Errc::empty_update_list, "aggregation called with no updates");
}

// Weighted mean of deltas against the current global.
ParameterSet mean_delta(const AggregatorState& state, const std::vector<const ModelUpdate*>& sorted) {
  const auto weights = sample_weights(sorted);
  std::vector<ParameterSet> deltas;
  deltas.reserve(sorted.size());
  for (const auto* u : sorted) {
    require_compatible(state.global, u->params, "update from " + u->client_id);
    deltas.push_back(u->is_delta ? u->params : subtract(u->params, state.global));
  }
  return weighted_sum(std::span<const ParameterSet>(deltas), weights);
}

}  // namespace

const ParameterSet& agg_weighted_avg(AggregatorState& state, std::span<const ModelUpdate> updates) {
  require_nonempty(updates);
  const auto sorted = sorted_by_client(updates);
  for (const auto* u : sorted) require_compatible(state.global, u->params, "update from " + u->client_id);
  const bool all_full = std::none_of(sorted.begin(), sorted.end(), [](const ModelUpdate* u) { return u->is_delta; });
  if (all_full) {
    std::vector<const ParameterSet*> sets;
    for (const auto* u : sorted) sets.push_back(&u->params);
    state.commit(weighted_sum(std::span<const ParameterSet* const>(sets), sample_weights(sorted)));
  } else {
    state.commit(axpy(1.0, mean_delta(state, sorted), state.global));
  }
  return state.global;
}

const ParameterSet& agg_server_opt(AggregatorState& state, std::span<const ModelUpdate> updates, ServerOpt strategy) {
  require_nonempty(updates);
  const auto sorted = sorted_by_client(updates);
  const ParameterSet delta = mean_delta(state, sorted);
  const auto& h = state.hyper;

  switch (strategy) {
    case ServerOpt::fedavgm: {
      state.v = axpy(h.momentum, state.v, delta);
      state.commit(axpy(1.0, state.v, state.global));
      break;
    }
    case ServerOpt::fedadagrad: {
      state.u = zip_elements(state.u, delta, [](double u, double d) { return u + d * d; });
      break;
    }
    case ServerOpt::fedadam: {
      state.m = zip_elements(state.m, delta, [&](double m, double d) { return h.beta1 * m + (1.0 - h.beta1) * d; });
      state.u = zip_elements(state.u, delta, [&](double u, double d) { return h.beta2 * u + (1.0 - h.beta2) * d * d; });
      break;
    }
    case ServerOpt::fedyogi: {
      state.m = zip_elements(state.m, delta, [&](double m, double d) { return h.beta1 * m + (1.0 - h.beta1) * d; });
      state.u = zip_elements(state.u, delta, [&](double u, double d) {
        const double d2 = d * d;
        const double diff = u - d2;
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        return u - (1.0 - h.beta2) * d2 * sign;
      });
      break;
    }
  }

  if (strategy != ServerOpt::fedavgm) {
    // FedAdagrad steps along the raw mean delta; Adam/Yogi along the first moment.
    const ParameterSet& direction = strategy == ServerOpt::fedadagrad ? delta : state.m;
    ParameterSet step = zip_elements(direction, state.u, [&](double d, double u) {
      return h.server_lr * d / (std::sqrt(u) + h.tau);
    });
    state.commit(axpy(1.0, step, state.global));
  }
  return state.global;
}

const ParameterSet& agg_async(AggregatorState& state, const ModelUpdate& update) {
  const std::int64_t s = staleness_of(state, update);
  require_compatible(state.global, update.params, "update from " + update.client_id);
  const double a = state.hyper.alpha * staleness_factor(state.hyper.staleness_exp, s);
  if (update.is_delta) {
    state.commit(axpy(a, update.params, state.global));
  } else {
    state.commit(zip_elements(state.global, update.params, [a](double g, double w) { return (1.0 - a) * g + a * w; }));
  }
  return state.global;
}

const ParameterSet& agg_buffered(AggregatorState& state, std::span<const ModelUpdate> buffer) {
  require_nonempty(buffer);
  const auto sorted = sorted_by_client(buffer);
  std::vector<ParameterSet> deltas;
  std::vector<double> weights;
  const double inv = state.hyper.server_lr / static_cast<double>(sorted.size());
  for (const auto* u : sorted) {
    weights.push_back(inv * staleness_factor(state.hyper.staleness_exp, staleness_of(state, *u)));
    deltas.push_back(update_delta(state, *u));
  }
  const ParameterSet step = weighted_sum(std::span<const ParameterSet>(deltas), weights);
  state.commit(axpy(1.0, step, state.global));
  return state.global;
}

const ParameterSet& agg_group(AggregatorState& state, std::span<const ModelUpdate> updates,
                              double population_samples) {
  require_nonempty(updates);
  const auto sorted = sorted_by_client(updates);
  double group_samples = 0.0;
  for (const auto* u : sorted) group_samples += static_cast<double>(u->sample_count);
  if (!(population_samples >= group_samples) || !(group_samples > 0.0))
    fail(Errc::invalid_argument, "population sample count must cover the group");
  std::vector<ParameterSet> deltas;
  std::vector<double> weights;
  for (const auto* u : sorted) {
    const double share = static_cast<double>(u->sample_count) / population_samples;
    weights.push_back(share * staleness_factor(state.hyper.staleness_exp, staleness_of(state, *u)));
    deltas.push_back(update_delta(state, *u));
  }
  const ParameterSet step = weighted_sum(std::span<const ParameterSet>(deltas), weights);
  state.commit(axpy(1.0, step, state.global));
  return state.global;
}

Strategy strategy_from_name(const std::string& raw) {
  std::string name = raw;
  if (name.size() > 10 && name.ends_with("Aggregator")) name.resize(name.size() - 10);
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "fedavg") return Strategy::fedavg;
  if (name == "fedavgm") return Strategy::fedavgm;
  if (name == "fedadagrad") return Strategy::fedadagrad;
  if (name == "fedadam") return Strategy::fedadam;
  if (name == "fedyogi") return Strategy::fedyogi;
  if (name == "fedasync") return Strategy::fedasync;
  if (name == "fedbuff") return Strategy::fedbuff;
  if (name == "fedcompass") return Strategy::fedcompass;
  if (name == "iceadmm" || name == "iiadmm" || name == "plfl" || name == "area")
    fail(Errc::not_implemented, "aggregator '" + raw + "' is registered but has no implementation");
  fail(Errc::unknown_strategy_name, "no aggregator named '" + raw + "'");
}

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::fedavg: return "FedAvgAggregator";
    case Strategy::fedavgm: return "FedAvgMAggregator";
    case Strategy::fedadagrad: return "FedAdagradAggregator";
    case Strategy::fedadam: return "FedAdamAggregator";
    case Strategy::fedyogi: return "FedYogiAggregator";
    case Strategy::fedasync: return "FedAsyncAggregator";
    case Strategy::fedbuff: return "FedBuffAggregator";
    case Strategy::fedcompass: return "FedCompassAggregator";
  }
  return "?";
}

bool is_async_strategy(Strategy s) {
  return s == Strategy::fedasync || s == Strategy::fedbuff || s == Strategy::fedcompass;
}

namespace {

class WeightedAvgAggregator final : public Aggregator {
 public:
  WeightedAvgAggregator(Strategy s, ParameterSet init, AggregatorHyper h) : Aggregator(std::move(init), h), s_(s) {}
  std::string_view name() const override { return strategy_name(s_); }
  bool aggregate(std::span<const ModelUpdate> updates) override {
    agg_weighted_avg(state_, updates);
    return true;
  }

 private:
  Strategy s_;
};

class ServerOptAggregator final : public Aggregator {
 public:
  ServerOptAggregator(Strategy s, ServerOpt opt, ParameterSet init, AggregatorHyper h)
      : Aggregator(std::move(init), h), s_(s), opt_(opt) {}
  std::string_view name() const override { return strategy_name(s_); }
  bool aggregate(std::span<const ModelUpdate> updates) override {
    agg_server_opt(state_, updates, opt_);
    return true;
  }

 private:
  Strategy s_;
  ServerOpt opt_;
};

class AsyncAggregator final : public Aggregator {
 public:
  using Aggregator::Aggregator;
  std::string_view name() const override { return strategy_name(Strategy::fedasync); }
  bool aggregate(std::span<const ModelUpdate> updates) override {
    require_nonempty(updates);
    for (const auto& u : updates) agg_async(state_, u);
    return true;
  }
};

// Count-triggered flush at K updates, plus an explicit flush at experiment end.
class BufferedAggregator final : public Aggregator {
 public:
  using Aggregator::Aggregator;
  std::string_view name() const override { return strategy_name(Strategy::fedbuff); }
  bool aggregate(std::span<const ModelUpdate> updates) override {
    require_nonempty(updates);
    bool changed = false;
    for (const auto& u : updates) {
      staleness_of(state_, u);
      buffer_.push_back(u);
      if (buffer_.size() >= static_cast<std::size_t>(std::max(state_.hyper.buffer_size, 1))) changed = flush() || changed;
    }
    return changed;
  }
  bool flush() override {
    if (buffer_.empty()) return false;
    agg_buffered(state_, buffer_);
    buffer_.clear();
    return true;
  }

 private:
  std::vector<ModelUpdate> buffer_;
};

}  // namespace

std::unique_ptr<Aggregator> make_aggregator(Strategy strategy, ParameterSet initial, AggregatorHyper hyper) {
  switch (strategy) {
    case Strategy::fedavg:
    case Strategy::fedcompass:
      return std::make_unique<WeightedAvgAggregator>(strategy, std::move(initial), hyper);
    case Strategy::fedavgm:
      return std::make_unique<ServerOptAggregator>(strategy, ServerOpt::fedavgm, std::move(initial), hyper);
    case Strategy::fedadagrad:
      return std::make_unique<ServerOptAggregator>(strategy, ServerOpt::fedadagrad, std::move(initial), hyper);
    case Strategy::fedadam:
      return std::make_unique<ServerOptAggregator>(strategy, ServerOpt::fedadam, std::move(initial), hyper);
    case Strategy::fedyogi:
      return std::make_unique<ServerOptAggregator>(strategy, ServerOpt::fedyogi, std::move(initial), hyper);
    case Strategy::fedasync:
      return std::make_unique<AsyncAggregator>(std::move(initial), hyper);
    case Strategy::fedbuff:
      return std::make_unique<BufferedAggregator>(std::move(initial), hyper);
  }
  fail(Errc::internal, "unhandled strategy");
}

}  // namespace apfl
