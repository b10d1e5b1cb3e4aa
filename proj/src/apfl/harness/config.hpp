#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "apfl/aggregator/aggregator.hpp"
#include "apfl/client/trainer.hpp"
#include "apfl/comm/transport.hpp"
#include "apfl/compression/compression.hpp"
#include "apfl/model/dataset.hpp"
#include "apfl/model/mlp.hpp"
#include "apfl/privacy/privacy.hpp"
#include "apfl/scheduler/scheduler.hpp"

namespace apfl {

/// A dataset from the named registry plus how it is cut into train/val.
struct DatasetSpec {
  std::string name = "blobs";  // blobs | csv | diabetes
  // blobs
  int classes = 10;
  int dim = 16;
  int per_class = 100;
  double spread = 1.0;
  std::uint64_t seed = 0;
  // csv / diabetes
  std::string path;
  std::optional<int> class_count;
  // every dataset
  double val_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

struct ClientDataConfig {
  DatasetSpec dataset;
  PartitionSpec partition;  // n_clients 0 = number of clients in the experiment
  std::optional<int> index;  // defaults to the client's position
};

struct CompressorConfig {
  bool enabled = false;
  CodecConfig codec;
};

/// What a client needs to reach the server and shape its uploads.
struct ClientCommConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string token;  // APFL_TOKEN in the environment takes precedence
  RetryPolicy retry;
  CompressorConfig compressor;
  std::string connector = "memory";  // memory | filesystem
  std::string connector_root;
  std::size_t inline_limit = std::size_t{10} << 20;
  std::size_t max_payload = kDefaultMaxPayload;
};

struct ClientConfig {
  std::string id;
  ClientCommConfig comm;
  ClientDataConfig data;
  TrainConfig train;
  PrivacyConfig privacy;
  std::string device = "cpu";  // accepted, CPU only
  std::string logging_dir;
  std::string checkpoint_dir;
  std::optional<double> mean_batch_time;  // simulation only
};

/// Server side of the wire.
struct CommConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  bool auth = false;
  std::map<std::string, std::string> tokens;  // client id -> token
  std::size_t max_payload = kDefaultMaxPayload;
};

struct ModelConfig {
  std::vector<int> hidden{32};
  std::vector<int> layer_dims;  // when set, overrides hidden and inferred in/out dims
  Activation activation = Activation::relu;
  std::optional<Loss> loss;  // inferred from the dataset when unset
  DType dtype = DType::f32;
  std::uint64_t seed = 0;
};

struct ServerConfig {
  std::string aggregator_name = "FedAvgAggregator";
  Strategy aggregator = Strategy::fedavg;
  AggregatorHyper hyper;
  SchedulerKind scheduler = SchedulerKind::sync;
  CompassParams compass;
  int num_global_epochs = 10;
  ModelConfig model;
  std::optional<DatasetSpec> validation;  // defaults to the clients' dataset
  std::string output_dir;
};

enum class BatchTimeDist { fixed, exponential };

struct SimConfig {
  bool present = false;
  std::vector<double> mean_batch_time;  // per client, overrides the draw
  BatchTimeDist distribution = BatchTimeDist::fixed;
  double batch_time_base = 1.0;    // fastest client
  double batch_time_spread = 10.0;  // slowest / fastest for exponential draws
  double latency = 0.0;             // seconds per message
  double bandwidth = std::numeric_limits<double>::infinity();  // bytes per second
  double jitter = 0.0;              // relative, uniform in [1 - j, 1 + j]
  std::uint64_t seed = 0;
  std::uint64_t max_events = 50'000'000;
};

enum class TopologyKind { star, hierarchical, decentralized, vertical };

struct TopologyConfig {
  TopologyKind kind = TopologyKind::star;
  std::map<std::string, std::string> tree;  // node -> parent
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::vector<std::size_t>> feature_split;
  int vfl_hidden = 16;
  int vfl_embedding = 4;
  int vfl_batch_size = 64;
};

struct ExperimentConfig {
  ServerConfig server;
  CommConfig comm;
  std::vector<ClientConfig> clients;
  SimConfig sim;
  TopologyConfig topology;
  YAML::Node shared_client_configs;  // as distributed to clients
  YAML::Node snapshot;               // fully resolved, for the run directory

  std::size_t n_clients() const { return clients.size(); }
};

/// Server file plus per-client files. Per-client files may be empty; the
/// server file can also list them under `clients`.
ExperimentConfig load_config(const std::filesystem::path& server_yaml,
                             const std::vector<std::filesystem::path>& client_yamls = {});

/// Same, from already-parsed documents (paths in `clients` resolve against `base_dir`).
ExperimentConfig load_config_from_nodes(const YAML::Node& server, const std::vector<YAML::Node>& clients,
                                        const std::filesystem::path& base_dir = ".");

YAML::Node parse_yaml_file(const std::filesystem::path& path);
YAML::Node parse_yaml_string(const std::string& text);

/// Deep merge: maps merge key-wise with `over` winning, anything else is replaced.
YAML::Node merge_yaml(const YAML::Node& base, const YAML::Node& over);

/// One client's view: the shared client_configs merged under its own file.
ClientConfig parse_client_config(const YAML::Node& shared, const YAML::Node& own, const std::string& default_id);

/// For the client side of a distributed run: its own file is parsed before it
/// has seen the shared section, so only the top-level keys are checked here.
void check_client_file_keys(const YAML::Node& own);

std::string to_yaml_string(const YAML::Node& node);

}  // namespace apfl
