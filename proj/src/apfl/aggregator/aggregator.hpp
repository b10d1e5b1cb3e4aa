#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apfl/core/update.hpp"

namespace apfl {

struct AggregatorHyper {
  double server_lr = 1.0;      // eta
  double beta1 = 0.9;
  double beta2 = 0.99;
  double tau = 1e-3;           // adaptivity floor of the FedOpt family
  double momentum = 0.9;       // FedAvgM beta
  double alpha = 0.9;          // FedAsync mixing weight
  double staleness_exp = 0.5;  // a in (s + 1)^-a
  int buffer_size = 3;         // FedBuff K
  std::size_t history = 64;    // global versions kept for delta derivation
};

struct AggregatorState {
  AggregatorState() = default;
  AggregatorState(ParameterSet initial, AggregatorHyper h);

  ParameterSet global;
  std::int64_t epoch = 0;
  ParameterSet v;  // FedAvgM momentum
  ParameterSet m;  // adaptive first moment
  ParameterSet u;  // adaptive second moment
  AggregatorHyper hyper;
  std::map<std::int64_t, ParameterSet> versions;

  /// Global model as of `epoch`, or the current one when that version was evicted.
  const ParameterSet& version(std::int64_t at) const;
  void commit(ParameterSet next);
};

double staleness_factor(double staleness_exp, std::int64_t staleness);

std::int64_t staleness_of(const AggregatorState& state, const ModelUpdate& update);

/// Delta of an update relative to the model it was trained from.
ParameterSet update_delta(const AggregatorState& state, const ModelUpdate& update);

/// Updates ordered by client_id so float summation order is fixed.
std::vector<const ModelUpdate*> sorted_by_client(std::span<const ModelUpdate> updates);

const ParameterSet& agg_weighted_avg(AggregatorState& state, std::span<const ModelUpdate> updates);

enum class ServerOpt { fedavgm, fedadagrad, fedadam, fedyogi };

const ParameterSet& agg_server_opt(AggregatorState& state, std::span<const ModelUpdate> updates, ServerOpt strategy);

const ParameterSet& agg_async(AggregatorState& state, const ModelUpdate& update);

const ParameterSet& agg_buffered(AggregatorState& state, std::span<const ModelUpdate> buffer);

/// Grouped aggregation used by the Compass scheduler: the synchronous
/// sample-weighted rule applied to deltas, with each member weighted by its
/// share of the whole population and discounted by staleness.
/// With every client in one fresh group this is exactly agg_weighted_avg.
const ParameterSet& agg_group(AggregatorState& state, std::span<const ModelUpdate> updates,
                              double population_samples);

enum class Strategy { fedavg, fedavgm, fedadagrad, fedadam, fedyogi, fedasync, fedbuff, fedcompass };

/// Accepts the aggregator class names used in server YAML (e.g.
/// "FedAvgAggregator") and short forms ("fedavg").
Strategy strategy_from_name(const std::string& name);
std::string_view strategy_name(Strategy s);
bool is_async_strategy(Strategy s);

class Aggregator {
 public:
  Aggregator(ParameterSet initial, AggregatorHyper hyper) : state_(std::move(initial), hyper) {}
  virtual ~Aggregator() = default;

  virtual std::string_view name() const = 0;

  /// Returns true when the global model changed.
  virtual bool aggregate(std::span<const ModelUpdate> updates) = 0;

  virtual bool aggregate_group(std::span<const ModelUpdate> updates, double population_samples) {
    agg_group(state_, updates, population_samples);
    return true;
  }

  /// Applies anything still buffered; used at experiment end.
  virtual bool flush() { return false; }

  const AggregatorState& state() const { return state_; }
  const ParameterSet& global() const { return state_.global; }
  std::int64_t epoch() const { return state_.epoch; }

 protected:
  AggregatorState state_;
};

std::unique_ptr<Aggregator> make_aggregator(Strategy strategy, ParameterSet initial, AggregatorHyper hyper = {});

}  // namespace apfl
