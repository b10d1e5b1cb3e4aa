#include "apfl/harness/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <random>

#ifndef APFL_DEFAULT_DATA_DIR
#define APFL_DEFAULT_DATA_DIR "data"
#endif

namespace apfl {

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("APFL_DATA_DIR"); env && *env) return env;
  return APFL_DEFAULT_DATA_DIR;
}

Dataset load_named_dataset(const DatasetSpec& spec) {
  if (spec.name == "blobs") return make_blobs(spec.classes, spec.dim, spec.per_class, spec.spread, spec.seed);
  if (spec.name == "diabetes") {
    const std::filesystem::path p = spec.path.empty() ? data_dir() / "diabetes.csv" : std::filesystem::path(spec.path);
    return load_csv(p, std::nullopt);
  }
  if (spec.name == "csv") return load_csv(spec.path, spec.class_count);
  fail(Errc::unknown_strategy_name, "no dataset named '" + spec.name + "'");
}

TrainValSplit split_named_dataset(const DatasetSpec& spec) {
  return train_val_split(load_named_dataset(spec), spec.val_fraction, spec.split_seed);
}

Dataset client_dataset(const ClientDataConfig& cfg) {
  const Dataset train = split_named_dataset(cfg.dataset).train;
  PartitionSpec p = cfg.partition;
  if (p.n_clients < 1) p.n_clients = 1;
  const int index = cfg.index.value_or(0);
  if (index < 0 || index >= p.n_clients)
    fail(Errc::config_error, "client index " + std::to_string(index) + " outside a partition of " +
                                 std::to_string(p.n_clients));
  const auto rows = partition_indices(train, p);
  return train.subset(rows[static_cast<std::size_t>(index)]);
}

Dataset validation_dataset(const ExperimentConfig& cfg) {
  if (cfg.server.validation) return split_named_dataset(*cfg.server.validation).val;
  if (cfg.clients.empty()) fail(Errc::config_error, "no clients to borrow a validation set from");
  return split_named_dataset(cfg.clients.front().data.dataset).val;
}

ModelSpec resolve_model(const ModelConfig& cfg, const Dataset& sample) {
  ModelSpec s;
  s.activation = cfg.activation;
  s.loss = cfg.loss.value_or(sample.is_classification() ? Loss::softmax_cross_entropy : Loss::mse);
  if (!cfg.layer_dims.empty()) {
    s.layer_dims = cfg.layer_dims;
  } else {
    s.layer_dims.push_back(static_cast<int>(sample.dim()));
    for (int h : cfg.hidden) s.layer_dims.push_back(h);
    s.layer_dims.push_back(s.loss == Loss::softmax_cross_entropy ? sample.class_count.value_or(2) : 1);
  }
  s.validate();
  if (static_cast<std::size_t>(s.input_dim()) != sample.dim())
    fail(Errc::dim_mismatch, "model input width " + std::to_string(s.input_dim()) + " does not match data width " +
                                 std::to_string(sample.dim()));
  return s;
}

std::uint64_t client_seed(const ClientConfig& c) {
  return c.train.seed * 1'000'003ULL + static_cast<std::uint64_t>(c.data.index.value_or(0));
}

std::unique_ptr<ClientAgent> make_client_agent(const ClientConfig& c, const ModelSpec& spec) {
  TrainConfig t = c.train;
  t.seed = client_seed(c);
  return std::make_unique<ClientAgent>(c.id, client_dataset(c.data), spec, t, c.privacy);
}

std::vector<double> client_batch_times(const ExperimentConfig& cfg) {
  const std::size_t n = cfg.n_clients();
  if (!cfg.sim.mean_batch_time.empty()) return cfg.sim.mean_batch_time;
  std::vector<double> t(n, cfg.sim.batch_time_base);
  if (cfg.sim.distribution == BatchTimeDist::exponential && n > 1) {
    // Exponential draws, rescaled so the slowest client is `spread` times the fastest.
    std::mt19937_64 rng(cfg.sim.seed);
    std::exponential_distribution<double> draw(1.0);
    std::vector<double> u(n);
    for (auto& x : u) x = draw(rng);
    const auto [lo, hi] = std::minmax_element(u.begin(), u.end());
    const double a = *lo, b = *hi;
    for (std::size_t i = 0; i < n; ++i)
      t[i] = cfg.sim.batch_time_base * (1.0 + (cfg.sim.batch_time_spread - 1.0) * (u[i] - a) / (b - a));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (cfg.clients[i].mean_batch_time) t[i] = *cfg.clients[i].mean_batch_time;
  return t;
}

int default_local_steps(const ExperimentConfig& cfg) {
  return cfg.clients.empty() ? 1 : cfg.clients.front().train.local_steps;
}

}  // namespace apfl
