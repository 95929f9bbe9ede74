#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "diffano/random.hpp"

namespace diffano {

/// Sinusoidal timestep features: [sin(t f_k), cos(t f_k)] with
/// f_k = 10000^(-k / (dim/2)), k = 0 .. dim/2 - 1. `dim` must be even.
class TimeEmbedding {
 public:
  explicit TimeEmbedding(int dim);
  int dim() const { return dim_; }
  Eigen::VectorXd operator()(int t) const;
  /// Writes the features for `t` into `out` (length dim).
  void fill(int t, Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  int dim_;
  Eigen::VectorXd freqs_;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Per-layer gradients, shaped like the network's layers.
using DenseGradients = std::vector<DenseLayer>;

/// Fully connected network with SiLU (x * sigmoid(x)) hidden activations and
/// a linear output layer. Inputs are columns: the first `layer_dims[0] -
/// time_embed_dim` rows carry the flattened image, the rest the time
/// embedding.
class DenseNet {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  };

  DenseNet() = default;
  /// All parameters zero.
  DenseNet(std::vector<int> layer_dims, int time_embed_dim);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static DenseNet random(std::vector<int> layer_dims, int time_embed_dim,
                         Rng& rng);

  const std::vector<int>& layer_dims() const { return dims_; }
  int time_embed_dim() const { return embed_.dim(); }
  int image_width() const { return dims_.front() - embed_.dim(); }
  int output_width() const { return dims_.back(); }
  std::size_t parameter_count() const;
  const TimeEmbedding& embedding() const { return embed_; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// Input matrix for a batch: image columns stacked over time features.
  Eigen::MatrixXd assemble(const std::vector<const double*>& images,
                           const std::vector<int>& steps) const;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input,
                          Cache* cache = nullptr) const;

  /// Back-propagates dLoss/dOutput. Adds parameter gradients into `grads`
  /// when non-null and returns dLoss/dInput.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& grad_out,
                           DenseGradients* grads) const;

  DenseGradients zero_gradients() const;

  bool all_finite() const;

  /// Visits every scalar parameter in layer order: weights (column-major)
  /// then bias, per layer.
  void for_each_parameter(const std::function<void(double&)>& fn);

  friend bool operator==(const DenseNet& a, const DenseNet& b);

 private:
  std::vector<int> dims_;
  TimeEmbedding embed_{0};
  std::vector<DenseLayer> layers_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const DenseNet& net, AdamConfig config);
  void step(DenseNet& net, const DenseGradients& grads);
  long iterations() const { return step_; }

 private:
  AdamConfig config_;
  DenseGradients m_;
  DenseGradients v_;
  long step_ = 0;
};

}  // namespace diffano
