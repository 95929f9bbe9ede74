#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "diffano/dense_net.hpp"
#include "diffano/image.hpp"
#include "diffano/sampler.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 10;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<int> hidden{256, 256};
  int time_embed_dim = 32;
  double data_std = 0.2;  // denoiser preconditioning scale
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct LossRecord {
  int iteration;
  double loss;
};

struct TrainResult {
  DenseNet net;
  std::vector<LossRecord> curve;  // one record per iteration
};

/// Raised when a training loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Noise predictor built around a dense network F:
///
///   eps(x, t) = skip(t) * x - out(t) * F(in(t) * x, t)
///
/// with v = 1 - abar_t + abar_t * data_std^2, skip = sqrt(1 - abar_t) / v,
/// out = sqrt(abar_t) * data_std / sqrt(v) and in = 1 / sqrt(v). The skip term
/// is the optimal linear predictor for data of scale data_std, so F only has
/// to model the residual.
struct Denoiser {
  DenseNet net;
  double data_std = 0.2;

  struct Scales {
    double skip;
    double out;
    double in;
  };
  Scales scales(double alpha_bar) const;

  friend bool operator==(const Denoiser&, const Denoiser&) = default;
};

struct DenoiserTrainResult {
  Denoiser model;
  std::vector<LossRecord> curve;
};

/// Seeded initial denoiser: image + embedding -> hidden... -> image.
Denoiser make_denoiser(const Shape& shape, const TrainConfig& cfg);
/// Seeded initial classifier: image + embedding -> hidden... -> 2 logits.
DenseNet make_classifier(const Shape& shape, const TrainConfig& cfg);

ImageTensor denoiser_forward(const Denoiser& model, const ImageTensor& x_t,
                             int t, const Schedule& schedule);

/// Mean of squared elementwise differences.
double loss_eps_mse(const ImageTensor& eps_true, const ImageTensor& eps_pred);

/// Adam on the noise-prediction MSE with t ~ U{1..T}, eps ~ N(0, I).
DenoiserTrainResult train_denoiser(std::span<const ImageTensor> images,
                                   const Schedule& schedule,
                                   const TrainConfig& cfg);

/// Log-softmax over the two class logits.
std::array<double, 2> classifier_forward(const DenseNet& net,
                                         const ImageTensor& x_t, int t);

/// Adam on two-class cross-entropy over noisy images, same noise protocol as
/// the denoiser.
TrainResult train_classifier(std::span<const ImageTensor> images,
                             std::span<const int> labels,
                             const Schedule& schedule, const TrainConfig& cfg);

/// d log C(label | x_t, t) / d x_t by reverse-mode differentiation.
ImageTensor classifier_input_grad(const DenseNet& net, const ImageTensor& x_t,
                                  int t, int label);

/// Batch loss of the denoiser objective and its parameter gradients.
double denoiser_loss_and_grad(const Denoiser& model, const Schedule& schedule,
                              std::span<const ImageTensor> x_t,
                              std::span<const int> steps,
                              std::span<const ImageTensor> eps,
                              DenseGradients* grads);

/// Batch mean cross-entropy and its parameter gradients.
double classifier_loss_and_grad(const DenseNet& net,
                                std::span<const ImageTensor> x_t,
                                std::span<const int> steps,
                                std::span<const int> labels,
                                DenseGradients* grads);

/// Mean of the first and last `window` records of a loss curve.
std::pair<double, double> smoothed_loss_ends(const std::vector<LossRecord>& curve,
                                             std::size_t window);

class TrainedEpsilonModel final : public EpsilonModel {
 public:
  TrainedEpsilonModel(Denoiser model, const Schedule& schedule)
      : model_(std::move(model)), schedule_(schedule) {}
  ImageTensor predict(const ImageTensor& x_t, int t) const override {
    return denoiser_forward(model_, x_t, t, schedule_);
  }
  const Denoiser& model() const { return model_; }

 private:
  Denoiser model_;
  const Schedule& schedule_;
};

class TrainedClassifier final : public ClassGradModel {
 public:
  explicit TrainedClassifier(DenseNet net) : net_(std::move(net)) {}
  ImageTensor log_prob_grad(const ImageTensor& x_t, int t,
                            int label) const override {
    return classifier_input_grad(net_, x_t, t, label);
  }
  double posterior(const ImageTensor& x_t, int t, int label) const;
  const DenseNet& net() const { return net_; }

 private:
  DenseNet net_;
};

// Checkpoint file: "DFANOCKP" magic, u32 version, u32 layer count, u32 dims,
// u32 time embedding width, u32 T, f64 data_std (0 for classifiers), then f64
// weight (column-major) and bias blocks in layer order. Little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  DenseNet net;
  int steps = 0;          // schedule length T the net was trained with
  double data_std = 0.0;  // denoiser preconditioning; 0 for classifiers
};

void save_checkpoint(const std::filesystem::path& path, const DenseNet& net,
                     int steps, double data_std = 0.0);

/// Rejects a wrong magic/version, and dims or T differing from the expected
/// values when given.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::vector<int>>& expected_dims = {},
                           std::optional<int> expected_steps = {});

}  // namespace diffano
