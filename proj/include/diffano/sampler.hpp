#pragma once

#include <functional>
#include <optional>

#include "diffano/image.hpp"
#include "diffano/random.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

/// Noise predictor eps(x_t, t). Implementations must be safe to call
/// concurrently from several threads.
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;
  virtual ImageTensor predict(const ImageTensor& x_t, int t) const = 0;
};

/// Gradient of log C(label | x_t, t) with respect to the pixels of x_t.
class ClassGradModel {
 public:
  virtual ~ClassGradModel() = default;
  virtual ImageTensor log_prob_grad(const ImageTensor& x_t, int t,
                                    int label) const = 0;
};

struct GuidanceConfig {
  double scale = 0.0;    // s >= 0
  int target_class = 0;  // healthy label h
  bool enabled = true;
};

struct Guide {
  const ClassGradModel& model;
  GuidanceConfig config;
};

/// Called after each decoding step with the new timestep and iterate.
using StepHook = std::function<void(int t, const ImageTensor& x_t)>;

/// Generalized reverse step from t to t-1. `noise` is ignored when sigma is 0
/// and may then be empty.
ImageTensor reverse_step(const ImageTensor& x_t, const ImageTensor& eps_hat,
                         int t, double sigma, const ImageTensor& noise,
                         const Schedule& schedule);

/// Reverse-ODE Euler step from t to t+1, valid for 0 <= t <= T-1.
ImageTensor encode_step(const ImageTensor& x_t, const ImageTensor& eps_pred,
                        int t, const Schedule& schedule);

/// eps_pred - s * sqrt(1 - abar_t) * class_grad.
ImageTensor guided_epsilon(const ImageTensor& eps_pred,
                           const ImageTensor& class_grad, double s, int t,
                           const Schedule& schedule);

/// Replaces eps by the noise implied by clamping the predicted clean image
/// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t) to [lo, hi]. Entries whose
/// prediction is already inside the range are returned unchanged, as is the
/// whole field when abar_t = 1.
ImageTensor clip_epsilon(const ImageTensor& x_t, const ImageTensor& eps, int t,
                         double lo, double hi, const Schedule& schedule);

/// Wraps a noise predictor so that its implied x_0 stays inside the data
/// range. Learned predictors can extrapolate badly away from the data, and
/// the deterministic sampler then amplifies the error step after step.
class ClippedEpsilonModel final : public EpsilonModel {
 public:
  ClippedEpsilonModel(const EpsilonModel& inner, const Schedule& schedule,
                      double lo = 0.0, double hi = 1.0);
  ImageTensor predict(const ImageTensor& x_t, int t) const override;

 private:
  const EpsilonModel& inner_;
  const Schedule& schedule_;
  double lo_;
  double hi_;
};

/// Deterministic encoding x_0 -> x_L. L = 0 returns the input.
ImageTensor encode(const ImageTensor& x0, int levels, const EpsilonModel& model,
                   const Schedule& schedule);

/// Deterministic (sigma = 0) decoding x_L -> x_0, optionally guided.
ImageTensor decode(const ImageTensor& x_levels, int levels,
                   const EpsilonModel& model, const std::optional<Guide>& guide,
                   const Schedule& schedule, const StepHook& hook = {});

/// Stochastic decoding with sigma = sigma_t at every step.
ImageTensor decode_stochastic(const ImageTensor& x_levels, int levels,
                              const EpsilonModel& model,
                              const std::optional<Guide>& guide,
                              const Schedule& schedule, Rng& rng,
                              const StepHook& hook = {});

}  // namespace diffano
