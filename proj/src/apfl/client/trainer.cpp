#include "apfl/client/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "apfl/error.hpp"

namespace apfl {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd" || name == "SGD") return OptimizerKind::sgd;
  if (name == "adam" || name == "Adam") return OptimizerKind::adam;
  fail(Errc::config_error, "unknown optimizer '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) fail(Errc::config_error, "lr must be >= 0");
  if (batch_size < 1) fail(Errc::config_error, "batch_size must be >= 1");
  if (local_steps < 1) fail(Errc::config_error, "local_steps must be >= 1");
  if (!(prox_mu >= 0.0)) fail(Errc::config_error, "prox_mu must be >= 0");
}

void sgd_step(ParameterSet& params, const ParameterSet& grads, double lr) {
  params = axpy(-lr, grads, params);
}

void AdamState::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  if (t == 0 || !m.compatible_with(params)) {
    m = zeros_like(params);
    v = zeros_like(params);
    t = 0;
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t e = 0; e < params.size(); ++e) {
    Tensor& w = params[e].tensor;
    Tensor& me = m[e].tensor;
    Tensor& ve = v[e].tensor;
    const Tensor& g = grads[e].tensor;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.get(i);
      const double mi = beta1 * me.get(i) + (1.0 - beta1) * gi;
      const double vi = beta2 * ve.get(i) + (1.0 - beta2) * gi * gi;
      me.set(i, mi);
      ve.set(i, vi);
      w.set(i, w.get(i) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

namespace {
constexpr std::uint64_t kNoiseStream = 0x9E3779B97F4A7C15ULL;
}

ClientAgent::ClientAgent(std::string client_id, Dataset data, ModelSpec spec, TrainConfig cfg, PrivacyConfig privacy)
    : id_(std::move(client_id)),
      data_(std::move(data)),
      spec_(std::move(spec)),
      cfg_(cfg),
      privacy_(privacy),
      batch_rng_(cfg.seed),
      noise_rng_(cfg.seed ^ kNoiseStream) {
  cfg_.validate();
  spec_.validate();
  if (privacy_.enabled) privacy_.validate();
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), 0);
  cursor_ = order_.size();  // first batch triggers the initial shuffle
}

std::vector<std::size_t> ClientAgent::next_batch() {
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), order_.size());
  std::vector<std::size_t> batch;
  batch.reserve(want);
  while (batch.size() < want) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), batch_rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

ModelUpdate ClientAgent::local_train(const ParameterSet& base, std::int64_t base_epoch, int steps) {
  if (data_.size() == 0) fail(Errc::empty_dataset, "client " + id_ + " has no local data");
  if (steps < 1) fail(Errc::invalid_argument, "local_train needs steps >= 1");
  check_params(spec_, base);

  ParameterSet w = base;
  for (int s = 0; s < steps; ++s) {
    const auto rows = next_batch();
    const Dataset batch = data_.subset(rows);
    ParameterSet grads = backward(spec_, w, batch).grads;
    if (cfg_.prox_mu > 0.0) grads = axpy(cfg_.prox_mu, subtract(w, base), grads);
    if (cfg_.optimizer == OptimizerKind::adam)
      adam_.step(w, grads, cfg_.lr);
    else
      sgd_step(w, grads, cfg_.lr);
    ++step_count_;
  }

  ModelUpdate u;
  u.client_id = id_;
  u.is_delta = cfg_.send_delta;
  u.params = cfg_.send_delta ? subtract(w, base) : std::move(w);
  u.sample_count = data_.size();
  u.local_steps = static_cast<std::uint32_t>(steps);
  u.base_epoch = base_epoch;
  return u;
}

ModelUpdate ClientAgent::apply_privacy_then_package(ModelUpdate update, const ParameterSet* base) {
  if (!privacy_.enabled) return update;
  if (update.is_delta) {
    update.params = privatize(update.params, privacy_, noise_rng_);
    return update;
  }
  if (base == nullptr) fail(Errc::invalid_argument, "privacy on a full-parameter update needs its base model");
  if (std::isinf(privacy_.epsilon) && std::isinf(privacy_.clip_norm)) return update;
  // w' = base + privatize(w - base)
  update.params = axpy(1.0, privatize(subtract(update.params, *base), privacy_, noise_rng_), *base);
  return update;
}

std::vector<MetricRecord> evaluate(const ParameterSet& params, const Dataset& data, const ModelSpec& spec,
                                   const std::string& entity, double timestamp) {
  if (data.size() == 0) fail(Errc::empty_dataset, "cannot evaluate on an empty dataset");
  const ForwardResult f = forward(spec, params, data);
  std::vector<MetricRecord> out{{timestamp, entity, "val_loss", f.loss}};
  if (data.is_classification()) {
    out.push_back({timestamp, entity, "val_accuracy", accuracy(f.outputs, data.labels)});
  } else {
    double mse = 0.0;
    for (Eigen::Index i = 0; i < f.outputs.rows(); ++i) {
      const double d = f.outputs(i, 0) - data.labels[static_cast<std::size_t>(i)];
      mse += d * d;
    }
    out.push_back({timestamp, entity, "val_mse", mse / static_cast<double>(data.size())});
  }
  return out;
}

}  // namespace apfl
