#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "apfl/harness/config.hpp"

namespace apfl {

/// Where bundled data files live: $APFL_DATA_DIR, else the source tree's data/.
std::filesystem::path data_dir();

/// The whole dataset a spec names, before any split.
Dataset load_named_dataset(const DatasetSpec& spec);

/// Deterministic train/val cut of a named dataset.
TrainValSplit split_named_dataset(const DatasetSpec& spec);

/// The client's shard of the training split.
Dataset client_dataset(const ClientDataConfig& cfg);

/// Server-side evaluation data: the configured validation dataset, or the
/// validation split of the first client's dataset.
Dataset validation_dataset(const ExperimentConfig& cfg);

/// Fills input/output dims and the loss from a sample of the data.
ModelSpec resolve_model(const ModelConfig& cfg, const Dataset& sample);

/// Per-client seed so clients sharing a config do not draw identical batches.
std::uint64_t client_seed(const ClientConfig& c);

std::unique_ptr<ClientAgent> make_client_agent(const ClientConfig& c, const ModelSpec& spec);

/// Mean per-batch compute time for every client (simulation).
std::vector<double> client_batch_times(const ExperimentConfig& cfg);

/// Steps a client trains per round when the scheduler does not decide.
int default_local_steps(const ExperimentConfig& cfg);

}  // namespace apfl
