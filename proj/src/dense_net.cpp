#include "diffano/dense_net.hpp"

#include <cmath>
#include <stdexcept>

namespace diffano {

namespace {

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

TimeEmbedding::TimeEmbedding(int dim) : dim_(dim) {
  if (dim < 0 || dim % 2 != 0) {
    throw std::invalid_argument("TimeEmbedding: dim must be even and >= 0");
  }
  const int half = dim / 2;
  freqs_.resize(half);
  for (int k = 0; k < half; ++k) {
    freqs_[k] = std::exp(-std::log(10000.0) * k / half);
  }
}

Eigen::VectorXd TimeEmbedding::operator()(int t) const {
  Eigen::VectorXd out(dim_);
  fill(t, out);
  return out;
}

void TimeEmbedding::fill(int t, Eigen::Ref<Eigen::VectorXd> out) const {
  const int half = dim_ / 2;
  for (int k = 0; k < half; ++k) {
    out[k] = std::sin(t * freqs_[k]);
    out[half + k] = std::cos(t * freqs_[k]);
  }
}

DenseNet::DenseNet(std::vector<int> layer_dims, int time_embed_dim)
    : dims_(std::move(layer_dims)), embed_(time_embed_dim) {
  if (dims_.size() < 2) {
    throw std::invalid_argument("DenseNet: need at least input and output");
  }
  for (int d : dims_) {
    if (d <= 0) throw std::invalid_argument("DenseNet: non-positive width");
  }
  if (dims_.front() <= time_embed_dim) {
    throw std::invalid_argument("DenseNet: input narrower than embedding");
  }
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    layers_.push_back({Eigen::MatrixXd::Zero(dims_[i + 1], dims_[i]),
                       Eigen::VectorXd::Zero(dims_[i + 1])});
  }
}

DenseNet DenseNet::random(std::vector<int> layer_dims, int time_embed_dim,
                          Rng& rng) {
  DenseNet net(std::move(layer_dims), time_embed_dim);
  for (auto& layer : net.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
        layer.weight(i, j) = bound * (2.0 * uniform01(rng) - 1.0);
      }
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      layer.bias[i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return net;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Eigen::MatrixXd DenseNet::assemble(const std::vector<const double*>& images,
                                   const std::vector<int>& steps) const {
  if (images.size() != steps.size()) {
    throw std::invalid_argument("DenseNet::assemble: batch size mismatch");
  }
  const int width = image_width();
  Eigen::MatrixXd input(dims_.front(), static_cast<Eigen::Index>(images.size()));
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    input.col(col).head(width) =
        Eigen::Map<const Eigen::VectorXd>(images[b], width);
    embed_.fill(steps[b], input.col(col).tail(embed_.dim()));
  }
  return input;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& input,
                                  Cache* cache) const {
  if (input.rows() != dims_.front()) {
    throw std::invalid_argument("DenseNet::forward: expected " +
                                std::to_string(dims_.front()) +
                                " input rows, got " +
                                std::to_string(input.rows()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Eigen::MatrixXd h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd z = layers_[i].weight * h;
    z.colwise() += layers_[i].bias;
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    if (i + 1 < layers_.size()) {
      h = z.unaryExpr(&silu);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Eigen::MatrixXd DenseNet::backward(const Cache& cache,
                                   const Eigen::MatrixXd& grad_out,
                                   DenseGradients* grads) const {
  if (cache.inputs.size() != layers_.size()) {
    throw std::invalid_argument("DenseNet::backward: cache from another net");
  }
  Eigen::MatrixXd delta = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) {
      delta = delta.cwiseProduct(cache.pre[k].unaryExpr(&silu_grad));
    }
    if (grads) {
      (*grads)[k].weight.noalias() += delta * cache.inputs[k].transpose();
      (*grads)[k].bias += delta.rowwise().sum();
    }
    delta = layers_[k].weight.transpose() * delta;
  }
  return delta;
}

DenseGradients DenseNet::zero_gradients() const {
  DenseGradients g;
  g.reserve(layers_.size());
  for (const auto& l : layers_) {
    g.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                 Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

bool DenseNet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

void DenseNet::for_each_parameter(const std::function<void(double&)>& fn) {
  for (auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) fn(l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) fn(l.bias.data()[i]);
  }
}

bool operator==(const DenseNet& a, const DenseNet& b) {
  if (a.dims_ != b.dims_ || a.time_embed_dim() != b.time_embed_dim()) {
    return false;
  }
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    if (a.layers_[i].weight != b.layers_[i].weight ||
        a.layers_[i].bias != b.layers_[i].bias) {
      return false;
    }
  }
  return true;
}

Adam::Adam(const DenseNet& net, AdamConfig config)
    : config_(config), m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(DenseNet& net, const DenseGradients& grads) {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double eps = config_.epsilon;
  auto update = [&](double* p, double* m, double* v, const double* g,
                    Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  };
  auto& layers = net.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    update(layers[k].weight.data(), m_[k].weight.data(), v_[k].weight.data(),
           grads[k].weight.data(), layers[k].weight.size());
    update(layers[k].bias.data(), m_[k].bias.data(), v_[k].bias.data(),
           grads[k].bias.data(), layers[k].bias.size());
  }
}

}  // namespace diffano
