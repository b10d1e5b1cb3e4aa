#include "apfl/topology/topology.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

namespace apfl {

// ---- hierarchical ----------------------------------------------------------

TreeTopology TreeTopology::from_parents(const std::map<std::string, std::string>& parent_of) {
  if (parent_of.empty()) fail(Errc::invalid_argument, "tree needs at least one leaf under the root");
  TreeTopology t;
  t.parent_ = parent_of;
  std::set<std::string> roots;
  for (const auto& [child, parent] : parent_of) {
    if (child == parent) fail(Errc::invalid_argument, "node '" + child + "' is its own parent");
    t.children_[parent].push_back(child);
    t.children_.try_emplace(child);
    if (!parent_of.contains(parent)) roots.insert(parent);
  }
  if (roots.size() != 1)
    fail(Errc::invalid_argument, "tree must have exactly one root, found " + std::to_string(roots.size()));
  t.root_ = *roots.begin();
  // Every node must reach the root within |nodes| hops, otherwise there is a cycle.
  const std::size_t limit = t.children_.size();
  for (const auto& [node, _] : parent_of) {
    std::string cur = node;
    std::size_t hops = 0;
    while (cur != t.root_) {
      cur = parent_of.at(cur);
      if (++hops > limit) fail(Errc::invalid_argument, "tree contains a cycle through '" + node + "'");
    }
  }
  for (auto& [_, kids] : t.children_) std::sort(kids.begin(), kids.end());
  return t;
}

const std::vector<std::string>& TreeTopology::children(const std::string& node) const {
  auto it = children_.find(node);
  if (it == children_.end()) fail(Errc::unknown_client, "no node '" + node + "' in tree");
  return it->second;
}

std::vector<std::string> TreeTopology::leaves() const {
  std::vector<std::string> out;
  for (const auto& [node, kids] : children_)
    if (kids.empty()) out.push_back(node);
  return out;
}

std::vector<std::string> TreeTopology::intermediates() const {
  std::vector<std::string> out;
  for (const auto& [node, kids] : children_)
    if (!kids.empty() && node != root_) out.push_back(node);
  return out;
}

namespace {

struct Pseudo {
  ParameterSet params;
  std::uint64_t count = 0;
};

Pseudo collect(const TreeTopology& tree, const std::string& node,
               const std::map<std::string, ParameterSet>& leaf_params,
               const std::map<std::string, std::uint64_t>& leaf_counts) {
  if (tree.is_leaf(node)) {
    auto it = leaf_params.find(node);
    if (it == leaf_params.end()) fail(Errc::missing_leaf_update, "leaf '" + node + "' sent no update this round");
    return {it->second, leaf_counts.at(node)};
  }
  std::vector<Pseudo> kids;
  std::uint64_t total = 0;
  for (const auto& c : tree.children(node)) {
    kids.push_back(collect(tree, c, leaf_params, leaf_counts));
    total += kids.back().count;
  }
  if (total == 0) fail(Errc::invalid_argument, "subtree under '" + node + "' holds no samples");
  std::vector<const ParameterSet*> sets;
  std::vector<double> w;
  for (const auto& k : kids) {
    sets.push_back(&k.params);
    w.push_back(static_cast<double>(k.count) / static_cast<double>(total));
  }
  return {weighted_sum(std::span<const ParameterSet* const>(sets), w), total};
}

}  // namespace

const ParameterSet& hier_round(const TreeTopology& tree, AggregatorState& root_state,
                               std::span<const ModelUpdate> leaf_updates) {
  std::map<std::string, ParameterSet> params;
  std::map<std::string, std::uint64_t> counts;
  for (const auto& u : leaf_updates) {
    if (u.client_id == tree.root() || !tree.parents().contains(u.client_id) || !tree.is_leaf(u.client_id))
      fail(Errc::unknown_client, "'" + u.client_id + "' is not a leaf of the tree");
    if (params.contains(u.client_id)) fail(Errc::duplicate_update, "two updates from leaf '" + u.client_id + "'");
    require_compatible(root_state.global, u.params, "update from " + u.client_id);
    params[u.client_id] = u.is_delta ? axpy(1.0, u.params, root_state.version(u.base_epoch)) : u.params;
    counts[u.client_id] = u.sample_count;
  }
  std::vector<ModelUpdate> top;
  for (const auto& c : tree.children(tree.root())) {
    Pseudo p = collect(tree, c, params, counts);
    ModelUpdate up;
    up.client_id = c;
    up.params = std::move(p.params);
    up.sample_count = p.count;
    up.base_epoch = root_state.epoch;
    top.push_back(std::move(up));
  }
  return agg_weighted_avg(root_state, top);
}

// ---- decentralized ---------------------------------------------------------

NeighborGraph::NeighborGraph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges)
    : adj_(n) {
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) fail(Errc::invalid_argument, "edge endpoint out of range");
    if (a == b) fail(Errc::invalid_argument, "self-loops are implicit; remove edge " + std::to_string(a));
    adj_[a].push_back(b);
    adj_[b].push_back(a);
  }
  for (auto& nb : adj_) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
}

NeighborGraph NeighborGraph::complete(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
  return NeighborGraph(n, e);
}

NeighborGraph NeighborGraph::circulant(std::size_t n, std::size_t k) {
  if (k >= n) fail(Errc::invalid_argument, "degree must be below the node count");
  if (k % 2 == 1 && n % 2 == 1) fail(Errc::invalid_argument, "odd degree needs an even node count");
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 1; s <= k / 2; ++s) e.emplace_back(i, (i + s) % n);
    if (k % 2 == 1 && i < n / 2) e.emplace_back(i, i + n / 2);
  }
  return NeighborGraph(n, e);
}

bool NeighborGraph::connected() const {
  if (adj_.empty()) return true;
  std::vector<bool> seen(adj_.size(), false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    for (auto j : adj_[i])
      if (!seen[j]) {
        seen[j] = true;
        ++reached;
        stack.push_back(j);
      }
  }
  return reached == adj_.size();
}

void NeighborGraph::set_weights(Eigen::MatrixXd w) {
  const auto n = static_cast<Eigen::Index>(adj_.size());
  if (w.rows() != n || w.cols() != n) fail(Errc::dim_mismatch, "mixing matrix must be n x n");
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<bool> allowed(adj_.size(), false);
    allowed[static_cast<std::size_t>(i)] = true;
    for (auto j : adj_[static_cast<std::size_t>(i)]) allowed[j] = true;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!(w(i, j) >= 0.0)) fail(Errc::invalid_argument, "mixing weights must be non-negative");
      if (w(i, j) != 0.0 && !allowed[static_cast<std::size_t>(j)])
        fail(Errc::invalid_argument, "mixing weight on a non-edge");
    }
    if (std::abs(w.row(i).sum() - 1.0) > 1e-12) fail(Errc::invalid_argument, "mixing rows must sum to 1");
  }
  weights_ = std::move(w);
}

Eigen::MatrixXd NeighborGraph::mixing_matrix() const {
  if (weights_.size() != 0) return weights_;
  const auto n = static_cast<Eigen::Index>(adj_.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& nb = adj_[static_cast<std::size_t>(i)];
    const double share = 1.0 / static_cast<double>(nb.size() + 1);
    w(i, i) = share;
    for (auto j : nb) w(i, static_cast<Eigen::Index>(j)) = share;
  }
  return w;
}

DflResult dfl_round(const NeighborGraph& graph, std::span<const ParameterSet> models) {
  if (models.size() != graph.size())
    fail(Errc::length_mismatch,
         std::to_string(models.size()) + " models for a graph of " + std::to_string(graph.size()) + " nodes");
  const Eigen::MatrixXd w = graph.mixing_matrix();
  DflResult r;
  r.models.reserve(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (graph.degree(i) == 0) {
      spdlog::warn("node {} has no neighbors and keeps its own model", i);
      r.isolated.push_back(i);
      r.models.push_back(models[i]);
      continue;
    }
    std::vector<std::size_t> closed = graph.neighbors(i);
    closed.insert(std::lower_bound(closed.begin(), closed.end(), i), i);
    std::vector<const ParameterSet*> sets;
    std::vector<double> weights;
    for (auto j : closed) {
      sets.push_back(&models[j]);
      weights.push_back(w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    r.models.push_back(weighted_sum(std::span<const ParameterSet* const>(sets), weights));
  }
  return r;
}

// ---- vertical --------------------------------------------------------------

void VflConfig::validate(std::size_t total_columns) const {
  if (feature_split.empty()) fail(Errc::invalid_argument, "vertical setup needs at least one client");
  if (client_specs.size() != feature_split.size())
    fail(Errc::length_mismatch, "one embedding spec per client is required");
  std::vector<int> owner(total_columns, -1);
  int embed_total = 0;
  for (std::size_t k = 0; k < feature_split.size(); ++k) {
    if (feature_split[k].empty()) fail(Errc::invalid_argument, "client " + std::to_string(k) + " owns no columns");
    for (auto c : feature_split[k]) {
      if (c >= total_columns) fail(Errc::dim_mismatch, "column " + std::to_string(c) + " out of range");
      if (owner[c] >= 0) fail(Errc::invalid_argument, "column " + std::to_string(c) + " assigned twice");
      owner[c] = static_cast<int>(k);
    }
    client_specs[k].validate();
    if (static_cast<std::size_t>(client_specs[k].input_dim()) != feature_split[k].size())
      fail(Errc::dim_mismatch, "embedding net " + std::to_string(k) + " input does not match its columns");
    embed_total += client_specs[k].output_dim();
  }
  for (std::size_t c = 0; c < total_columns; ++c)
    if (owner[c] < 0) fail(Errc::invalid_argument, "column " + std::to_string(c) + " belongs to no client");
  head.validate();
  if (head.input_dim() != embed_total) fail(Errc::dim_mismatch, "head input must equal the summed embedding dims");
}

std::vector<Eigen::Index> VflConfig::embedding_offsets() const {
  std::vector<Eigen::Index> off;
  Eigen::Index at = 0;
  for (const auto& s : client_specs) {
    off.push_back(at);
    at += s.output_dim();
  }
  return off;
}

VflConfig default_vfl_config(std::vector<std::vector<std::size_t>> feature_split, int hidden, int embed) {
  VflConfig cfg;
  for (const auto& cols : feature_split) {
    ModelSpec s;
    s.layer_dims = {static_cast<int>(cols.size()), hidden, embed};
    s.activation = Activation::relu;
    s.loss = Loss::mse;
    cfg.client_specs.push_back(s);
  }
  cfg.head.layer_dims = {embed * static_cast<int>(feature_split.size()), 1};
  cfg.head.activation = Activation::identity;
  cfg.head.loss = Loss::mse;
  cfg.feature_split = std::move(feature_split);
  return cfg;
}

std::vector<std::vector<std::size_t>> contiguous_split(const std::vector<int>& sizes) {
  std::vector<std::vector<std::size_t>> out;
  std::size_t at = 0;
  for (int s : sizes) {
    if (s < 1) fail(Errc::invalid_argument, "column block sizes must be positive");
    std::vector<std::size_t> cols(static_cast<std::size_t>(s));
    std::iota(cols.begin(), cols.end(), at);
    at += cols.size();
    out.push_back(std::move(cols));
  }
  return out;
}

void Optimizer::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  if (kind == OptimizerKind::adam)
    adam.step(params, grads, lr);
  else
    sgd_step(params, grads, lr);
}

namespace {

Eigen::MatrixXd concat_embeddings(const VflConfig& cfg, std::span<const Eigen::MatrixXd> embeddings,
                                  std::size_t rows) {
  if (embeddings.size() != cfg.num_clients())
    fail(Errc::dim_mismatch, std::to_string(embeddings.size()) + " embeddings for " +
                                 std::to_string(cfg.num_clients()) + " clients");
  Eigen::MatrixXd all(static_cast<Eigen::Index>(rows), cfg.head.input_dim());
  const auto off = cfg.embedding_offsets();
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    const auto& e = embeddings[k];
    if (e.rows() != static_cast<Eigen::Index>(rows) || e.cols() != cfg.client_specs[k].output_dim())
      fail(Errc::dim_mismatch, "embedding from client " + std::to_string(k) + " has shape " +
                                   std::to_string(e.rows()) + "x" + std::to_string(e.cols()));
    all.middleCols(off[k], e.cols()) = e;
  }
  return all;
}

struct HeadPass {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> embedding_grads;
  ParameterSet head_grads;
};

HeadPass head_pass(const VflConfig& cfg, std::span<const Eigen::MatrixXd> embeddings,
                   const std::vector<double>& labels, const ParameterSet& head) {
  const Eigen::MatrixXd all = concat_embeddings(cfg, embeddings, labels.size());
  const Eigen::MatrixXd out = predict(cfg.head, head, all);
  HeadPass p;
  p.loss = loss_value(cfg.head.loss, out, labels);
  ChainResult chain = backward_from_output(cfg.head, head, all, loss_gradient(cfg.head.loss, out, labels));
  const auto off = cfg.embedding_offsets();
  for (std::size_t k = 0; k < cfg.num_clients(); ++k)
    p.embedding_grads.emplace_back(chain.input_grad.middleCols(off[k], cfg.client_specs[k].output_dim()));
  p.head_grads = std::move(chain.grads);
  return p;
}

std::vector<Eigen::MatrixXd> embed_all(const VflConfig& cfg, std::span<const ParameterSet> client_params,
                                       std::span<const Eigen::MatrixXd> client_features) {
  if (client_params.size() != cfg.num_clients() || client_features.size() != cfg.num_clients())
    fail(Errc::dim_mismatch, "need parameters and features for every client");
  std::vector<Eigen::MatrixXd> e;
  for (std::size_t k = 0; k < cfg.num_clients(); ++k) {
    if (client_features[k].cols() != cfg.client_specs[k].input_dim())
      fail(Errc::dim_mismatch, "client " + std::to_string(k) + " features have the wrong width");
    e.push_back(predict(cfg.client_specs[k], client_params[k], client_features[k]));
  }
  return e;
}

}  // namespace

VflServerResult vfl_server_step(const VflConfig& cfg, std::span<const Eigen::MatrixXd> embeddings,
                                const std::vector<double>& labels, ParameterSet& head, Optimizer& head_opt,
                                double lr) {
  HeadPass p = head_pass(cfg, embeddings, labels, head);
  head_opt.step(head, p.head_grads, lr);
  return {p.loss, std::move(p.embedding_grads), std::move(p.head_grads)};
}

void vfl_client_step(const ModelSpec& spec, ParameterSet& params, Optimizer& opt, const Eigen::MatrixXd& features,
                     const Eigen::MatrixXd& embedding_grad, double lr) {
  if (features.cols() != spec.input_dim()) fail(Errc::dim_mismatch, "local features have the wrong width");
  if (embedding_grad.rows() != features.rows() || embedding_grad.cols() != spec.output_dim())
    fail(Errc::dim_mismatch, "embedding gradient shape does not match the local batch");
  ChainResult chain = backward_from_output(spec, params, features, embedding_grad);
  opt.step(params, chain.grads, lr);
}

VflGradients vfl_gradients(const VflConfig& cfg, std::span<const ParameterSet> client_params,
                           const ParameterSet& head, std::span<const Eigen::MatrixXd> client_features,
                           const std::vector<double>& labels) {
  const auto emb = embed_all(cfg, client_params, client_features);
  HeadPass p = head_pass(cfg, emb, labels, head);
  VflGradients g;
  g.loss = p.loss;
  g.head_grads = std::move(p.head_grads);
  for (std::size_t k = 0; k < cfg.num_clients(); ++k)
    g.client_grads.push_back(
        backward_from_output(cfg.client_specs[k], client_params[k], client_features[k], p.embedding_grads[k]).grads);
  return g;
}

double vfl_loss(const VflConfig& cfg, std::span<const ParameterSet> client_params, const ParameterSet& head,
                std::span<const Eigen::MatrixXd> client_features, const std::vector<double>& labels) {
  const auto emb = embed_all(cfg, client_params, client_features);
  const Eigen::MatrixXd out = predict(cfg.head, head, concat_embeddings(cfg, emb, labels.size()));
  return loss_value(cfg.head.loss, out, labels);
}

namespace {

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& x, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace

VflTrainer::VflTrainer(VflConfig cfg, const Dataset& train, const Dataset& val, VflTrainConfig tc)
    : cfg_(std::move(cfg)), tc_(tc), rng_(tc.seed) {
  train.validate();
  val.validate();
  if (train.size() == 0) fail(Errc::empty_dataset, "vertical training set is empty");
  if (val.dim() != train.dim()) fail(Errc::dim_mismatch, "train and validation widths differ");
  cfg_.validate(train.dim());
  if (cfg_.head.output_dim() != 1 || cfg_.head.loss != Loss::mse)
    fail(Errc::invalid_argument, "vertical trainer expects a single-output MSE head");
  if (!(tc_.lr >= 0.0) || tc_.epochs < 0 || tc_.batch_size < 0)
    fail(Errc::invalid_argument, "bad vertical training settings");

  // Each party scales only what it holds, using training rows.
  for (std::size_t k = 0; k < cfg_.num_clients(); ++k) {
    Eigen::MatrixXd xt = take_columns(train.features, cfg_.feature_split[k]);
    Eigen::MatrixXd xv = take_columns(val.features, cfg_.feature_split[k]);
    if (tc_.standardize) {
      const Eigen::RowVectorXd mean = xt.colwise().mean();
      Eigen::RowVectorXd sd = ((xt.rowwise() - mean).array().square().colwise().sum() /
                               static_cast<double>(xt.rows())).sqrt();
      for (Eigen::Index j = 0; j < sd.size(); ++j)
        if (!(sd(j) > 0.0)) sd(j) = 1.0;
      xt = (xt.rowwise() - mean).array().rowwise() / sd.array();
      xv = (xv.rowwise() - mean).array().rowwise() / sd.array();
    }
    train_x_.push_back(std::move(xt));
    val_x_.push_back(std::move(xv));
  }
  train_y_ = train.labels;
  val_y_ = val.labels;
  if (tc_.standardize) {
    const double n = static_cast<double>(train_y_.size());
    y_mean_ = std::accumulate(train_y_.begin(), train_y_.end(), 0.0) / n;
    double ss = 0.0;
    for (double y : train_y_) ss += (y - y_mean_) * (y - y_mean_);
    y_scale_ = std::sqrt(ss / n);
    if (!(y_scale_ > 0.0)) y_scale_ = 1.0;
  }
  for (double y : train_y_) train_y_scaled_.push_back((y - y_mean_) / y_scale_);

  for (std::size_t k = 0; k < cfg_.num_clients(); ++k) {
    client_params_.push_back(init_params(cfg_.client_specs[k], tc_.seed * 1000 + k + 1, tc_.dtype));
    client_opts_.push_back(Optimizer{tc_.optimizer, {}});
  }
  head_ = init_params(cfg_.head, tc_.seed * 1000, tc_.dtype);
  head_opt_ = Optimizer{tc_.optimizer, {}};
}

double VflTrainer::train_epoch() {
  const std::size_t n = train_y_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);
  const std::size_t bs = tc_.batch_size == 0 ? n : static_cast<std::size_t>(tc_.batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::span<const std::size_t> rows(order.data() + start, std::min(bs, n - start));
    std::vector<Eigen::MatrixXd> xb, emb;
    for (std::size_t k = 0; k < cfg_.num_clients(); ++k) {
      xb.push_back(take_rows(train_x_[k], rows));
      emb.push_back(predict(cfg_.client_specs[k], client_params_[k], xb.back()));
    }
    std::vector<double> yb;
    for (auto r : rows) yb.push_back(train_y_scaled_[r]);
    const auto res = vfl_server_step(cfg_, emb, yb, head_, head_opt_, tc_.lr);
    for (std::size_t k = 0; k < cfg_.num_clients(); ++k)
      vfl_client_step(cfg_.client_specs[k], client_params_[k], client_opts_[k], xb[k], res.embedding_grads[k],
                      tc_.lr);
  }
  ++epoch_;
  return train_mse();
}

std::vector<MetricRecord> VflTrainer::run() {
  std::vector<MetricRecord> out;
  auto record = [&](double t) {
    out.push_back({t, "vfl", "train_mse", train_mse()});
    out.push_back({t, "vfl", "val_mse", validation_mse()});
  };
  record(0.0);
  for (int e = 0; e < tc_.epochs; ++e) {
    train_epoch();
    record(static_cast<double>(epoch_));
  }
  return out;
}

double VflTrainer::mse_on(const std::vector<Eigen::MatrixXd>& xs, const std::vector<double>& y_raw) const {
  if (y_raw.empty()) return 0.0;
  std::vector<Eigen::MatrixXd> emb;
  for (std::size_t k = 0; k < cfg_.num_clients(); ++k)
    emb.push_back(predict(cfg_.client_specs[k], client_params_[k], xs[k]));
  const Eigen::MatrixXd out = predict(cfg_.head, head_, concat_embeddings(cfg_, emb, y_raw.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < y_raw.size(); ++i) {
    const double pred = out(static_cast<Eigen::Index>(i), 0) * y_scale_ + y_mean_;
    s += (pred - y_raw[i]) * (pred - y_raw[i]);
  }
  return s / static_cast<double>(y_raw.size());
}

double VflTrainer::baseline_mse() const {
  const double mean = std::accumulate(train_y_.begin(), train_y_.end(), 0.0) / static_cast<double>(train_y_.size());
  double s = 0.0;
  for (double y : val_y_) s += (y - mean) * (y - mean);
  return val_y_.empty() ? 0.0 : s / static_cast<double>(val_y_.size());
}

}  // namespace apfl
