#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "apfl/core/update.hpp"
#include "apfl/model/dataset.hpp"
#include "apfl/model/mlp.hpp"
#include "apfl/privacy/privacy.hpp"

namespace apfl {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double lr = 0.01;
  int batch_size = 32;
  int local_steps = 10;
  double prox_mu = 0.0;  // 0 disables the FedProx term
  bool send_delta = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  ParameterSet m;
  ParameterSet v;

  void step(ParameterSet& params, const ParameterSet& grads, double lr);
};

void sgd_step(ParameterSet& params, const ParameterSet& grads, double lr);

/// The client-side trainer. Mini-batches are drawn cyclically from a seeded
/// permutation that is reshuffled at every pass boundary; Adam moments persist
/// across rounds.
class ClientAgent {
 public:
  ClientAgent(std::string client_id, Dataset data, ModelSpec spec, TrainConfig cfg, PrivacyConfig privacy = {});

  const std::string& id() const { return id_; }
  const Dataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }
  const TrainConfig& train_config() const { return cfg_; }
  const PrivacyConfig& privacy_config() const { return privacy_; }

  ModelUpdate local_train(const ParameterSet& base, std::int64_t base_epoch, int steps);

  /// Clips and perturbs the change from `base`. Full-parameter updates need
  /// the base they were trained from; delta updates don't.
  ModelUpdate apply_privacy_then_package(ModelUpdate update, const ParameterSet* base = nullptr);

  /// Optimizer steps taken over the agent's lifetime.
  std::uint64_t step_count() const { return step_count_; }

 private:
  std::vector<std::size_t> next_batch();

  std::string id_;
  Dataset data_;
  ModelSpec spec_;
  TrainConfig cfg_;
  PrivacyConfig privacy_;
  std::mt19937_64 batch_rng_;
  std::mt19937_64 noise_rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  AdamState adam_;
  std::uint64_t step_count_ = 0;
};

/// loss plus accuracy (classification) or mse (regression).
std::vector<MetricRecord> evaluate(const ParameterSet& params, const Dataset& data, const ModelSpec& spec,
                                   const std::string& entity = "server", double timestamp = 0.0);

}  // namespace apfl
