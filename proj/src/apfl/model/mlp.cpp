#include "apfl/model/mlp.hpp"

#include <cmath>
#include <random>

#include "apfl/error.hpp"

namespace apfl {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer); }
std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer); }

Eigen::MatrixXd to_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  const std::vector<double> values = t.to_f64();
  return Eigen::Map<const RowMajor>(values.data(), rows, cols);
}

Eigen::RowVectorXd to_row(const Tensor& t) {
  const std::vector<double> values = t.to_f64();
  return Eigen::Map<const Eigen::RowVectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

struct Layer {
  Eigen::MatrixXd weight;  // [out, in]
  Eigen::RowVectorXd bias;
};

std::vector<Layer> unpack(const ModelSpec& spec, const ParameterSet& params) {
  check_params(spec, params);
  std::vector<Layer> layers;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = spec.layer_dims[l];
    const auto out = spec.layer_dims[l + 1];
    layers.push_back({to_matrix(params.at(weight_name(l)), out, in), to_row(params.at(bias_name(l)))});
  }
  return layers;
}

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  return a == Activation::relu ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
}

// Pre-activations per layer plus the input to each layer.
struct Trace {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
  Eigen::MatrixXd outputs;
};

Trace run(const ModelSpec& spec, const std::vector<Layer>& layers, const Eigen::MatrixXd& x) {
  if (x.cols() != spec.input_dim())
    fail(Errc::shape_mismatch, "input has " + std::to_string(x.cols()) + " columns, model expects " +
                                   std::to_string(spec.input_dim()));
  Trace tr;
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    tr.inputs.push_back(h);
    Eigen::MatrixXd z = h * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias;
    tr.pre.push_back(z);
    h = (l + 1 < layers.size()) ? activate(spec.activation, z) : z;
  }
  tr.outputs = std::move(h);
  return tr;
}

Eigen::MatrixXd mse_targets(const Eigen::MatrixXd& outputs, const std::vector<double>& labels) {
  const auto n = outputs.rows();
  const auto k = outputs.cols();
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = labels[static_cast<std::size_t>(i)];
    if (k == 1) {
      t(i, 0) = y;
    } else {
      const auto c = static_cast<Eigen::Index>(y);
      if (c < 0 || c >= k || static_cast<double>(c) != y)
        fail(Errc::shape_mismatch, "multi-output MSE needs class labels in [0, output_dim)");
      t(i, c) = 1.0;
    }
  }
  return t;
}

void check_labels(const Eigen::MatrixXd& outputs, const std::vector<double>& labels) {
  if (static_cast<std::size_t>(outputs.rows()) != labels.size())
    fail(Errc::shape_mismatch, "label count differs from batch size");
  if (labels.empty()) fail(Errc::empty_dataset, "empty batch");
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

Eigen::Index class_index(double y, Eigen::Index k) {
  const auto c = static_cast<Eigen::Index>(y);
  if (c < 0 || c >= k || static_cast<double>(c) != y) fail(Errc::shape_mismatch, "class label outside [0, output_dim)");
  return c;
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  fail(Errc::config_error, "unknown activation '" + name + "'");
}

Loss parse_loss(const std::string& name) {
  if (name == "mse") return Loss::mse;
  if (name == "softmax_cross_entropy" || name == "cross_entropy") return Loss::softmax_cross_entropy;
  fail(Errc::config_error, "unknown loss '" + name + "'");
}

void ModelSpec::validate() const {
  if (layer_dims.size() < 2) fail(Errc::invalid_argument, "model needs at least input and output dims");
  for (int d : layer_dims)
    if (d < 1) fail(Errc::invalid_argument, "layer dims must be >= 1");
}

ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed, DType dtype) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<std::uint32_t>(spec.layer_dims[l]);
    const auto out = static_cast<std::uint32_t>(spec.layer_dims[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(dtype, {out, in});
    for (std::size_t i = 0; i < w.size(); ++i) w.set(i, u(rng));
    Tensor b(dtype, {out});
    for (std::size_t i = 0; i < b.size(); ++i) b.set(i, u(rng));
    p.add(weight_name(l), std::move(w));
    p.add(bias_name(l), std::move(b));
  }
  return p;
}

void check_params(const ModelSpec& spec, const ParameterSet& params) {
  spec.validate();
  if (params.size() != 2 * spec.num_layers())
    fail(Errc::shape_mismatch, "expected " + std::to_string(2 * spec.num_layers()) + " tensors, got " +
                                   std::to_string(params.size()));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<std::uint32_t>(spec.layer_dims[l]);
    const auto out = static_cast<std::uint32_t>(spec.layer_dims[l + 1]);
    const Tensor* w = params.find(weight_name(l));
    const Tensor* b = params.find(bias_name(l));
    if (w == nullptr || w->shape() != Shape{out, in})
      fail(Errc::shape_mismatch, weight_name(l) + " must have shape [" + std::to_string(out) + ", " +
                                     std::to_string(in) + "]");
    if (b == nullptr || b->shape() != Shape{out})
      fail(Errc::shape_mismatch, bias_name(l) + " must have shape [" + std::to_string(out) + "]");
  }
}

Eigen::MatrixXd predict(const ModelSpec& spec, const ParameterSet& params, const Eigen::MatrixXd& inputs) {
  return run(spec, unpack(spec, params), inputs).outputs;
}

double loss_value(Loss loss, const Eigen::MatrixXd& outputs, const std::vector<double>& labels) {
  check_labels(outputs, labels);
  const double n = static_cast<double>(outputs.rows());
  if (loss == Loss::mse) return (outputs - mse_targets(outputs, labels)).squaredNorm() / n;
  double total = 0.0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    const auto c = class_index(labels[static_cast<std::size_t>(i)], outputs.cols());
    const double m = outputs.row(i).maxCoeff();
    const double lse = m + std::log((outputs.row(i).array() - m).exp().sum());
    total += lse - outputs(i, c);
  }
  return total / n;
}

Eigen::MatrixXd loss_gradient(Loss loss, const Eigen::MatrixXd& outputs, const std::vector<double>& labels) {
  check_labels(outputs, labels);
  const double n = static_cast<double>(outputs.rows());
  if (loss == Loss::mse) return 2.0 * (outputs - mse_targets(outputs, labels)) / n;
  Eigen::MatrixXd g = softmax_rows(outputs);
  for (Eigen::Index i = 0; i < outputs.rows(); ++i)
    g(i, class_index(labels[static_cast<std::size_t>(i)], outputs.cols())) -= 1.0;
  return g / n;
}

ForwardResult forward(const ModelSpec& spec, const ParameterSet& params, const Dataset& batch) {
  ForwardResult r;
  r.outputs = predict(spec, params, batch.features);
  r.loss = loss_value(spec.loss, r.outputs, batch.labels);
  return r;
}

ChainResult backward_from_output(const ModelSpec& spec, const ParameterSet& params, const Eigen::MatrixXd& inputs,
                                 const Eigen::MatrixXd& output_grad) {
  const auto layers = unpack(spec, params);
  const Trace tr = run(spec, layers, inputs);
  if (output_grad.rows() != tr.outputs.rows() || output_grad.cols() != tr.outputs.cols())
    fail(Errc::dim_mismatch, "output gradient shape differs from model output");

  std::vector<Eigen::MatrixXd> dw(layers.size());
  std::vector<Eigen::RowVectorXd> db(layers.size());
  Eigen::MatrixXd delta = output_grad;  // dL/d(pre-activation) of the current layer
  for (std::size_t l = layers.size(); l-- > 0;) {
    dw[l] = delta.transpose() * tr.inputs[l];
    db[l] = delta.colwise().sum();
    Eigen::MatrixXd upstream = delta * layers[l].weight;
    if (l > 0 && spec.activation == Activation::relu)
      upstream = upstream.cwiseProduct((tr.pre[l - 1].array() > 0.0).cast<double>().matrix());
    delta = std::move(upstream);
  }

  ChainResult r;
  r.input_grad = std::move(delta);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DType dtype = params.at(weight_name(l)).dtype();
    const RowMajor w = dw[l];
    Tensor tw = Tensor::from_values(dtype, params.at(weight_name(l)).shape(),
                                    std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    Tensor tb = Tensor::from_values(params.at(bias_name(l)).dtype(), params.at(bias_name(l)).shape(),
                                    std::span<const double>(db[l].data(), static_cast<std::size_t>(db[l].size())));
    r.grads.add(weight_name(l), std::move(tw));
    r.grads.add(bias_name(l), std::move(tb));
  }
  return r;
}

BackwardResult backward(const ModelSpec& spec, const ParameterSet& params, const Dataset& batch) {
  const Eigen::MatrixXd outputs = predict(spec, params, batch.features);
  BackwardResult r;
  r.loss = loss_value(spec.loss, outputs, batch.labels);
  r.grads = backward_from_output(spec, params, batch.features, loss_gradient(spec.loss, outputs, batch.labels)).grads;
  return r;
}

double accuracy(const Eigen::MatrixXd& outputs, const std::vector<double>& labels) {
  check_labels(outputs, labels);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    Eigen::Index best = 0;
    outputs.row(i).maxCoeff(&best);
    if (static_cast<double>(best) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.rows());
}

}  // namespace apfl
