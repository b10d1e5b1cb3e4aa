#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "apfl/core/params.hpp"
#include "apfl/model/dataset.hpp"

namespace apfl {

enum class Activation { relu, identity };
enum class Loss { mse, softmax_cross_entropy };

Activation parse_activation(const std::string& name);
Loss parse_loss(const std::string& name);

/// Fully connected network. Layer i owns "W<i>" (shape [out, in]) and "b<i>"
/// (shape [out]); the activation applies to hidden layers only.
struct ModelSpec {
  std::vector<int> layer_dims;
  Activation activation = Activation::relu;
  Loss loss = Loss::softmax_cross_entropy;

  std::size_t num_layers() const { return layer_dims.size() - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  void validate() const;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
ParameterSet init_params(const ModelSpec& spec, std::uint64_t seed, DType dtype = DType::f32);

void check_params(const ModelSpec& spec, const ParameterSet& params);

Eigen::MatrixXd predict(const ModelSpec& spec, const ParameterSet& params, const Eigen::MatrixXd& inputs);

struct ForwardResult {
  Eigen::MatrixXd outputs;
  double loss = 0.0;
};

ForwardResult forward(const ModelSpec& spec, const ParameterSet& params, const Dataset& batch);

struct BackwardResult {
  double loss = 0.0;
  ParameterSet grads;
};

/// Gradient of the batch-mean loss with respect to every parameter.
BackwardResult backward(const ModelSpec& spec, const ParameterSet& params, const Dataset& batch);

struct ChainResult {
  ParameterSet grads;
  Eigen::MatrixXd input_grad;
};

/// Backpropagates an externally supplied dL/d(outputs) through the network.
ChainResult backward_from_output(const ModelSpec& spec, const ParameterSet& params, const Eigen::MatrixXd& inputs,
                                 const Eigen::MatrixXd& output_grad);

double loss_value(Loss loss, const Eigen::MatrixXd& outputs, const std::vector<double>& labels);
/// dL/d(outputs) for the batch-mean loss.
Eigen::MatrixXd loss_gradient(Loss loss, const Eigen::MatrixXd& outputs, const std::vector<double>& labels);

double accuracy(const Eigen::MatrixXd& outputs, const std::vector<double>& labels);

}  // namespace apfl
