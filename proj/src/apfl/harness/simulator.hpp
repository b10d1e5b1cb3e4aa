#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "apfl/harness/config.hpp"
#include "apfl/harness/metrics.hpp"

namespace apfl {

struct SimResult {
  std::vector<MetricRecord> records;
  UtilizationReport utilization;
  ParameterSet final_model;
  std::int64_t aggregations = 0;  // global model versions produced
  std::uint64_t updates = 0;      // client updates the server received
  std::uint64_t events = 0;
  double end_time = 0.0;          // virtual seconds (rounds for round-based topologies)
};

/// Star topology on a virtual clock. Clients really train; only time is modeled.
/// Sync stops after num_global_epochs aggregations, async and Compass after
/// num_global_epochs * n_clients received updates.
SimResult run_simulation(const ExperimentConfig& cfg);

/// Hierarchical, decentralized and vertical experiments, one synchronous round
/// per global epoch. Timestamps are round numbers.
SimResult run_round_experiment(const ExperimentConfig& cfg);

/// Picks run_simulation or run_round_experiment from the topology.
SimResult run_experiment(const ExperimentConfig& cfg);

/// config.yaml, metrics.csv, metrics.jsonl, final_model.apfm and, when the run
/// has timing, utilization.csv and gantt.csv.
void write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg, const SimResult& result);

}  // namespace apfl
