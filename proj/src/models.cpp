#include "diffano/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "diffano/forward_process.hpp"
#include "diffano/random.hpp"

namespace diffano {

namespace {

std::vector<int> network_dims(int in_width, const TrainConfig& cfg,
                              int out_width) {
  std::vector<int> dims{in_width + cfg.time_embed_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(out_width);
  return dims;
}

void check_image(const DenseNet& net, const ImageTensor& x, const char* what) {
  if (static_cast<int>(x.size()) != net.image_width()) {
    throw std::invalid_argument(std::string(what) + ": image has " +
                                std::to_string(x.size()) +
                                " values, network expects " +
                                std::to_string(net.image_width()));
  }
}

Eigen::MatrixXd batch_input(const DenseNet& net,
                            std::span<const ImageTensor> x_t,
                            std::span<const int> steps) {
  std::vector<const double*> ptrs;
  ptrs.reserve(x_t.size());
  for (const auto& x : x_t) {
    check_image(net, x, "batch_input");
    ptrs.push_back(x.data().data());
  }
  return net.assemble(ptrs, {steps.begin(), steps.end()});
}

Eigen::MatrixXd log_softmax_cols(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const double m = logits.col(b).maxCoeff();
    const double lse = m + std::log((logits.col(b).array() - m).exp().sum());
    out.col(b) = logits.col(b).array() - lse;
  }
  return out;
}

// Draws one training batch under the q_sample noise protocol.
struct NoisyBatch {
  std::vector<ImageTensor> x_t;
  std::vector<ImageTensor> eps;
  std::vector<int> steps;
  std::vector<int> index;
};

NoisyBatch draw_batch(std::span<const ImageTensor> images,
                      const Schedule& schedule, int batch_size, Rng& rng) {
  NoisyBatch b;
  const int n = static_cast<int>(images.size());
  for (int i = 0; i < batch_size; ++i) {
    const int idx = uniform_int(rng, 0, n - 1);
    const int t = uniform_int(rng, 1, schedule.steps());
    ImageTensor eps = standard_normal(images[idx].shape(), rng);
    b.x_t.push_back(q_sample(images[idx], t, eps, schedule));
    b.eps.push_back(std::move(eps));
    b.steps.push_back(t);
    b.index.push_back(idx);
  }
  return b;
}

void check_finite_loss(double loss, int iteration, const TrainConfig& cfg,
                       const char* what) {
  if (!std::isfinite(loss)) {
    throw TrainingDiverged(std::string(what) + ": non-finite loss at iteration " +
                           std::to_string(iteration) + " (learning_rate=" +
                           std::to_string(cfg.learning_rate) +
                           "); lower the learning rate or check inputs");
  }
}

AdamConfig adam_config(const TrainConfig& cfg) {
  return {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate <= 0");
  if (batch_size <= 0) throw std::invalid_argument("batch_size <= 0");
  if (iterations < 0) throw std::invalid_argument("iterations < 0");
  if (time_embed_dim < 0 || time_embed_dim % 2 != 0) {
    throw std::invalid_argument("time_embed_dim must be even and >= 0");
  }
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  }
  if (!(data_std > 0.0)) throw std::invalid_argument("data_std <= 0");
}

Denoiser::Scales Denoiser::scales(double alpha_bar) const {
  const double v = 1.0 - alpha_bar + alpha_bar * data_std * data_std;
  return {std::sqrt(1.0 - alpha_bar) / v,
          std::sqrt(alpha_bar) * data_std / std::sqrt(v), 1.0 / std::sqrt(v)};
}

Denoiser make_denoiser(const Shape& shape, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int width = static_cast<int>(shape.size());
  return {DenseNet::random(network_dims(width, cfg, width), cfg.time_embed_dim,
                           rng),
          cfg.data_std};
}

DenseNet make_classifier(const Shape& shape, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  return DenseNet::random(network_dims(static_cast<int>(shape.size()), cfg, 2),
                          cfg.time_embed_dim, rng);
}

ImageTensor denoiser_forward(const Denoiser& model, const ImageTensor& x_t,
                             int t, const Schedule& schedule) {
  const DenseNet& net = model.net;
  check_image(net, x_t, "denoiser_forward");
  if (net.output_width() != net.image_width()) {
    throw std::invalid_argument("denoiser_forward: not a denoiser network");
  }
  const auto sc = model.scales(schedule.alpha_bar(t));
  const ImageTensor scaled_in = scaled(x_t, sc.in);
  const Eigen::MatrixXd f =
      net.forward(net.assemble({scaled_in.data().data()}, {t}));
  ImageTensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = sc.skip * x_t[i] - sc.out * f(static_cast<Eigen::Index>(i), 0);
  }
  return out;
}

double loss_eps_mse(const ImageTensor& eps_true, const ImageTensor& eps_pred) {
  require_same_shape(eps_true, eps_pred, "loss_eps_mse");
  if (eps_true.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) {
    const double d = eps_pred[i] - eps_true[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps_true.size());
}

double denoiser_loss_and_grad(const Denoiser& model, const Schedule& schedule,
                              std::span<const ImageTensor> x_t,
                              std::span<const int> steps,
                              std::span<const ImageTensor> eps,
                              DenseGradients* grads) {
  const DenseNet& net = model.net;
  if (x_t.size() != steps.size() || x_t.size() != eps.size()) {
    throw std::invalid_argument("denoiser_loss_and_grad: batch misaligned");
  }
  std::vector<ImageTensor> inputs;
  std::vector<Denoiser::Scales> sc;
  for (std::size_t b = 0; b < x_t.size(); ++b) {
    require_same_shape(x_t[b], eps[b], "denoiser_loss_and_grad");
    sc.push_back(model.scales(schedule.alpha_bar(steps[b])));
    inputs.push_back(scaled(x_t[b], sc.back().in));
  }
  const Eigen::MatrixXd input = batch_input(net, inputs, steps);
  DenseNet::Cache cache;
  const Eigen::MatrixXd f = net.forward(input, grads ? &cache : nullptr);
  Eigen::MatrixXd diff(f.rows(), f.cols());
  for (std::size_t b = 0; b < x_t.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    const Eigen::Map<const Eigen::VectorXd> x(x_t[b].data().data(), f.rows());
    const Eigen::Map<const Eigen::VectorXd> e(eps[b].data().data(), f.rows());
    diff.col(col) = sc[b].skip * x - sc[b].out * f.col(col) - e;
  }
  const double count = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / count;
  if (grads) {
    // d eps_hat / d F = -out(t), per column.
    Eigen::MatrixXd grad_f = (2.0 / count) * diff;
    for (std::size_t b = 0; b < x_t.size(); ++b) {
      grad_f.col(static_cast<Eigen::Index>(b)) *= -sc[b].out;
    }
    net.backward(cache, grad_f, grads);
  }
  return loss;
}

double classifier_loss_and_grad(const DenseNet& net,
                                std::span<const ImageTensor> x_t,
                                std::span<const int> steps,
                                std::span<const int> labels,
                                DenseGradients* grads) {
  const Eigen::MatrixXd input = batch_input(net, x_t, steps);
  DenseNet::Cache cache;
  const Eigen::MatrixXd logits = net.forward(input, grads ? &cache : nullptr);
  const Eigen::MatrixXd logp = log_softmax_cols(logits);
  const double n = static_cast<double>(labels.size());
  double loss = 0.0;
  Eigen::MatrixXd grad = logp.array().exp();  // softmax
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    loss -= logp(labels[b], col);
    grad(labels[b], col) -= 1.0;
  }
  if (grads) net.backward(cache, grad / n, grads);
  return loss / n;
}

DenoiserTrainResult train_denoiser(std::span<const ImageTensor> images,
                                   const Schedule& schedule,
                                   const TrainConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("train_denoiser: no data");
  DenoiserTrainResult result{make_denoiser(images.front().shape(), cfg), {}};
  Adam adam(result.model.net, adam_config(cfg));
  // Data stream is offset from the init stream so both stay reproducible.
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  result.curve.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    const NoisyBatch batch = draw_batch(images, schedule, cfg.batch_size, rng);
    DenseGradients grads = result.model.net.zero_gradients();
    const double loss = denoiser_loss_and_grad(result.model, schedule, batch.x_t,
                                               batch.steps, batch.eps, &grads);
    check_finite_loss(loss, it, cfg, "train_denoiser");
    adam.step(result.model.net, grads);
    result.curve.push_back({it, loss});
  }
  return result;
}

std::array<double, 2> classifier_forward(const DenseNet& net,
                                         const ImageTensor& x_t, int t) {
  check_image(net, x_t, "classifier_forward");
  if (net.output_width() != 2) {
    throw std::invalid_argument("classifier_forward: not a two-class network");
  }
  const Eigen::MatrixXd logp =
      log_softmax_cols(net.forward(net.assemble({x_t.data().data()}, {t})));
  return {logp(0, 0), logp(1, 0)};
}

TrainResult train_classifier(std::span<const ImageTensor> images,
                             std::span<const int> labels,
                             const Schedule& schedule, const TrainConfig& cfg) {
  if (images.empty()) throw std::invalid_argument("train_classifier: no data");
  if (images.size() != labels.size()) {
    throw std::invalid_argument("train_classifier: labels misaligned");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("train_classifier: label");
  }
  TrainResult result{make_classifier(images.front().shape(), cfg), {}};
  Adam adam(result.net, adam_config(cfg));
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  result.curve.reserve(static_cast<std::size_t>(cfg.iterations));
  std::vector<int> batch_labels(static_cast<std::size_t>(cfg.batch_size));
  for (int it = 0; it < cfg.iterations; ++it) {
    const NoisyBatch batch = draw_batch(images, schedule, cfg.batch_size, rng);
    for (std::size_t b = 0; b < batch.index.size(); ++b) {
      batch_labels[b] = labels[batch.index[b]];
    }
    DenseGradients grads = result.net.zero_gradients();
    const double loss = classifier_loss_and_grad(result.net, batch.x_t,
                                                 batch.steps, batch_labels, &grads);
    check_finite_loss(loss, it, cfg, "train_classifier");
    adam.step(result.net, grads);
    result.curve.push_back({it, loss});
  }
  return result;
}

ImageTensor classifier_input_grad(const DenseNet& net, const ImageTensor& x_t,
                                  int t, int label) {
  check_image(net, x_t, "classifier_input_grad");
  if (label != 0 && label != 1) {
    throw std::invalid_argument("classifier_input_grad: label must be 0 or 1");
  }
  DenseNet::Cache cache;
  const Eigen::MatrixXd logits =
      net.forward(net.assemble({x_t.data().data()}, {t}), &cache);
  // d log softmax_label / d logits = onehot(label) - softmax
  Eigen::MatrixXd grad = -log_softmax_cols(logits).array().exp();
  grad(label, 0) += 1.0;
  const Eigen::MatrixXd din = net.backward(cache, grad, nullptr);
  const double* p = din.data();
  return ImageTensor(x_t.shape(), std::vector<double>(p, p + x_t.size()));
}

double TrainedClassifier::posterior(const ImageTensor& x_t, int t,
                                    int label) const {
  return std::exp(classifier_forward(net_, x_t, t).at(label));
}

std::pair<double, double> smoothed_loss_ends(const std::vector<LossRecord>& curve,
                                             std::size_t window) {
  if (curve.empty() || window == 0) return {0.0, 0.0};
  window = std::min(window, curve.size());
  double head = 0.0;
  double tail = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    head += curve[i].loss;
    tail += curve[curve.size() - 1 - i].loss;
  }
  return {head / window, tail / window};
}

// --- checkpoint io -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'F', 'A', 'N', 'O', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw CheckpointError("checkpoint " + path.string() + ": truncated header");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DenseNet& net,
                     int steps, double data_std) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(net.layer_dims().size()));
  for (int d : net.layer_dims()) write_u32(out, static_cast<std::uint32_t>(d));
  write_u32(out, static_cast<std::uint32_t>(net.time_embed_dim()));
  write_u32(out, static_cast<std::uint32_t>(steps));
  out.write(reinterpret_cast<const char*>(&data_std), sizeof data_std);
  for (const auto& l : net.layers()) {
    out.write(reinterpret_cast<const char*>(l.weight.data()),
              static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(l.bias.data()),
              static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::vector<int>>& expected_dims,
                           std::optional<int> expected_steps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) ||
      std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("checkpoint " + path.string() + ": bad magic");
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + ": version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const std::uint32_t n_dims = read_u32(in, path);
  if (n_dims < 2 || n_dims > 64) {
    throw CheckpointError("checkpoint " + path.string() + ": bad layer count");
  }
  std::vector<int> dims(n_dims);
  for (auto& d : dims) d = static_cast<int>(read_u32(in, path));
  const int embed = static_cast<int>(read_u32(in, path));
  const int steps = static_cast<int>(read_u32(in, path));
  double data_std = 0.0;
  if (!in.read(reinterpret_cast<char*>(&data_std), sizeof data_std)) {
    throw CheckpointError("checkpoint " + path.string() + ": truncated header");
  }
  if (expected_dims && *expected_dims != dims) {
    throw CheckpointError("checkpoint " + path.string() +
                          ": layer dims do not match the configured network");
  }
  if (expected_steps && *expected_steps != steps) {
    throw CheckpointError("checkpoint " + path.string() + ": trained with T=" +
                          std::to_string(steps) + ", configured T=" +
                          std::to_string(*expected_steps));
  }
  Checkpoint ck{DenseNet(dims, embed), steps, data_std};
  for (auto& l : ck.net.layers()) {
    in.read(reinterpret_cast<char*>(l.weight.data()),
            static_cast<std::streamsize>(l.weight.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(l.bias.data()),
            static_cast<std::streamsize>(l.bias.size() * sizeof(double)));
    if (!in) {
      throw CheckpointError("checkpoint " + path.string() + ": truncated parameters");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("checkpoint " + path.string() + ": trailing bytes");
  }
  return ck;
}

}  // namespace diffano
