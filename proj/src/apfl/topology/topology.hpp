#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "apfl/aggregator/aggregator.hpp"
#include "apfl/client/trainer.hpp"
#include "apfl/model/mlp.hpp"

namespace apfl {

// ---- hierarchical ----------------------------------------------------------

/// Aggregation tree. Leaves are clients, every other node is the root or an
/// intermediate server.
class TreeTopology {
 public:
  /// `parent_of` maps every non-root node to its parent; the root is the one
  /// node that appears only as a parent.
  static TreeTopology from_parents(const std::map<std::string, std::string>& parent_of);

  const std::string& root() const { return root_; }
  const std::vector<std::string>& children(const std::string& node) const;
  bool is_leaf(const std::string& node) const { return children(node).empty(); }
  std::vector<std::string> leaves() const;
  std::vector<std::string> intermediates() const;
  const std::map<std::string, std::string>& parents() const { return parent_; }

 private:
  std::string root_;
  std::map<std::string, std::string> parent_;
  std::map<std::string, std::vector<std::string>> children_;
};

/// One synchronous round: intermediates average their children by sample
/// count and forward (average, summed count) upward; the root applies
/// agg_weighted_avg. Delta updates are resolved against the root's history
/// first.
const ParameterSet& hier_round(const TreeTopology& tree, AggregatorState& root_state,
                               std::span<const ModelUpdate> leaf_updates);

// ---- decentralized ---------------------------------------------------------

class NeighborGraph {
 public:
  NeighborGraph() = default;
  /// Undirected edges over nodes 0..n-1. Mixing is uniform over each closed
  /// neighborhood unless explicit weights are set.
  NeighborGraph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

  static NeighborGraph complete(std::size_t n);
  /// Each node linked to the k/2 nearest on either side (k even) plus, for odd
  /// k, the node opposite; n even when k is odd.
  static NeighborGraph circulant(std::size_t n, std::size_t k);

  std::size_t size() const { return adj_.size(); }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adj_.at(i); }
  std::size_t degree(std::size_t i) const { return adj_.at(i).size(); }
  bool connected() const;

  /// Row-stochastic, zero outside closed neighborhoods.
  void set_weights(Eigen::MatrixXd w);
  Eigen::MatrixXd mixing_matrix() const;

 private:
  std::vector<std::vector<std::size_t>> adj_;
  Eigen::MatrixXd weights_;  // empty = uniform
};

struct DflResult {
  std::vector<ParameterSet> models;
  std::vector<std::size_t> isolated;  // degree-0 nodes that kept their own model
};

/// Every node replaces its model with the mixing-weighted average of its closed
/// neighborhood, all computed from the pre-round models.
DflResult dfl_round(const NeighborGraph& graph, std::span<const ParameterSet> models);

// ---- vertical --------------------------------------------------------------

struct VflConfig {
  std::vector<std::vector<std::size_t>> feature_split;  // column indices per client
  std::vector<ModelSpec> client_specs;                  // embedding nets
  ModelSpec head;                                       // over concatenated embeddings

  void validate(std::size_t total_columns) const;
  std::size_t num_clients() const { return feature_split.size(); }
  /// First head-input column of each client's block.
  std::vector<Eigen::Index> embedding_offsets() const;
};

/// Client nets [cols, hidden, embed] with relu, linear MSE head over the concatenation.
VflConfig default_vfl_config(std::vector<std::vector<std::size_t>> feature_split, int hidden = 16, int embed = 4);

/// Splits columns 0..total-1 into consecutive blocks of the given sizes.
std::vector<std::vector<std::size_t>> contiguous_split(const std::vector<int>& sizes);

/// SGD or Adam with persistent state.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::adam;
  AdamState adam;

  void step(ParameterSet& params, const ParameterSet& grads, double lr);
};

struct VflServerResult {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> embedding_grads;
  ParameterSet head_grads;
};

/// Concatenate, run the head, take the loss, backprop to each embedding block;
/// one optimizer step on the head.
VflServerResult vfl_server_step(const VflConfig& cfg, std::span<const Eigen::MatrixXd> embeddings,
                                const std::vector<double>& labels, ParameterSet& head, Optimizer& head_opt,
                                double lr);

/// Backprop the server's gradient through the local embedding net and step.
void vfl_client_step(const ModelSpec& spec, ParameterSet& params, Optimizer& opt, const Eigen::MatrixXd& features,
                     const Eigen::MatrixXd& embedding_grad, double lr);

struct VflGradients {
  double loss = 0.0;
  std::vector<ParameterSet> client_grads;
  ParameterSet head_grads;
};

/// Gradient of the composite loss with respect to every party's parameters.
VflGradients vfl_gradients(const VflConfig& cfg, std::span<const ParameterSet> client_params,
                           const ParameterSet& head, std::span<const Eigen::MatrixXd> client_features,
                           const std::vector<double>& labels);

double vfl_loss(const VflConfig& cfg, std::span<const ParameterSet> client_params, const ParameterSet& head,
                std::span<const Eigen::MatrixXd> client_features, const std::vector<double>& labels);

struct VflTrainConfig {
  int epochs = 200;
  double lr = 0.01;
  int batch_size = 64;  // 0 = full batch
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  bool standardize = true;  // clients scale their own columns, server its labels
  DType dtype = DType::f64;
};

/// Whole vertical pipeline in one process. Reported MSEs are in label units.
class VflTrainer {
 public:
  VflTrainer(VflConfig cfg, const Dataset& train, const Dataset& val, VflTrainConfig tc);

  /// One pass over the training rows; returns the training MSE after it.
  double train_epoch();
  std::vector<MetricRecord> run();

  double train_mse() const { return mse_on(train_x_, train_y_); }
  double validation_mse() const { return mse_on(val_x_, val_y_); }
  /// Validation MSE of always predicting the training-label mean.
  double baseline_mse() const;

  const std::vector<ParameterSet>& client_params() const { return client_params_; }
  const ParameterSet& head_params() const { return head_; }

 private:
  double mse_on(const std::vector<Eigen::MatrixXd>& xs, const std::vector<double>& y_raw) const;

  VflConfig cfg_;
  VflTrainConfig tc_;
  std::vector<Eigen::MatrixXd> train_x_, val_x_;
  std::vector<double> train_y_, val_y_;  // raw labels
  std::vector<double> train_y_scaled_;
  double y_mean_ = 0.0, y_scale_ = 1.0;
  std::vector<ParameterSet> client_params_;
  std::vector<Optimizer> client_opts_;
  ParameterSet head_;
  Optimizer head_opt_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
};

}  // namespace apfl
