#include "diffano/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffano {

namespace {

void check_levels(int levels, const Schedule& schedule, const char* what) {
  if (levels < 0 || levels > schedule.steps()) {
    throw std::out_of_range(std::string(what) + ": noise level " +
                            std::to_string(levels) + " outside [0, " +
                            std::to_string(schedule.steps()) + "]");
  }
}

ImageTensor guided_prediction(const ImageTensor& x, int t,
                              const EpsilonModel& model,
                              const std::optional<Guide>& guide,
                              const Schedule& schedule) {
  ImageTensor eps = model.predict(x, t);
  if (guide && guide->config.enabled) {
    const ImageTensor grad =
        guide->model.log_prob_grad(x, t, guide->config.target_class);
    eps = guided_epsilon(eps, grad, guide->config.scale, t, schedule);
  }
  return eps;
}

}  // namespace

ImageTensor reverse_step(const ImageTensor& x_t, const ImageTensor& eps_hat,
                         int t, double sigma, const ImageTensor& noise,
                         const Schedule& schedule) {
  require_same_shape(x_t, eps_hat, "reverse_step");
  const double abar_t = schedule.alpha_bar(t);
  schedule.beta(t);  // t in [1, T]
  const double abar_prev = schedule.alpha_bar(t - 1);
  if (sigma < 0.0) throw std::invalid_argument("reverse_step: sigma < 0");
  const double radicand = 1.0 - abar_prev - sigma * sigma;
  if (radicand < 0.0) {
    throw std::invalid_argument(
        "reverse_step: sigma^2 exceeds 1 - alpha_bar_{t-1}");
  }
  const bool stochastic = sigma != 0.0;
  if (stochastic) require_same_shape(x_t, noise, "reverse_step noise");

  const double sqrt_prev = std::sqrt(abar_prev);
  const double sqrt_t = std::sqrt(abar_t);
  const double sqrt_one_minus_t = std::sqrt(1.0 - abar_t);
  const double dir = std::sqrt(radicand);

  ImageTensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0_pred = (x_t[i] - sqrt_one_minus_t * eps_hat[i]) / sqrt_t;
    double v = sqrt_prev * x0_pred + dir * eps_hat[i];
    if (stochastic) v += sigma * noise[i];
    out[i] = v;
  }
  return out;
}

ImageTensor encode_step(const ImageTensor& x_t, const ImageTensor& eps_pred,
                        int t, const Schedule& schedule) {
  require_same_shape(x_t, eps_pred, "encode_step");
  if (t < 0 || t >= schedule.steps()) {
    throw std::out_of_range("encode_step: timestep " + std::to_string(t) +
                            " outside [0, T-1]");
  }
  const double abar_t = schedule.alpha_bar(t);
  const double abar_next = schedule.alpha_bar(t + 1);
  const double lead = std::sqrt(abar_next);
  const double coef_x = std::sqrt(1.0 / abar_t) - std::sqrt(1.0 / abar_next);
  const double coef_eps =
      std::sqrt(1.0 / abar_next - 1.0) - std::sqrt(1.0 / abar_t - 1.0);

  ImageTensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x_t[i] + lead * (coef_x * x_t[i] + coef_eps * eps_pred[i]);
  }
  return out;
}

ImageTensor guided_epsilon(const ImageTensor& eps_pred,
                           const ImageTensor& class_grad, double s, int t,
                           const Schedule& schedule) {
  require_same_shape(eps_pred, class_grad, "guided_epsilon");
  if (s < 0.0) throw std::invalid_argument("guided_epsilon: s < 0");
  if (s == 0.0) return eps_pred;
  const double weight = s * std::sqrt(1.0 - schedule.alpha_bar(t));
  ImageTensor out(eps_pred.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = eps_pred[i] - weight * class_grad[i];
  }
  return out;
}

ImageTensor clip_epsilon(const ImageTensor& x_t, const ImageTensor& eps, int t,
                         double lo, double hi, const Schedule& schedule) {
  require_same_shape(x_t, eps, "clip_epsilon");
  if (!(lo <= hi)) throw std::invalid_argument("clip_epsilon: lo > hi");
  const double abar = schedule.alpha_bar(t);
  if (abar >= 1.0) return eps;
  const double sqrt_abar = std::sqrt(abar);
  const double sqrt_one_minus = std::sqrt(1.0 - abar);
  ImageTensor out = eps;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (x_t[i] - sqrt_one_minus * eps[i]) / sqrt_abar;
    if (x0 < lo || x0 > hi) {
      out[i] = (x_t[i] - sqrt_abar * std::clamp(x0, lo, hi)) / sqrt_one_minus;
    }
  }
  return out;
}

ClippedEpsilonModel::ClippedEpsilonModel(const EpsilonModel& inner,
                                         const Schedule& schedule, double lo,
                                         double hi)
    : inner_(inner), schedule_(schedule), lo_(lo), hi_(hi) {
  if (!(lo <= hi)) throw std::invalid_argument("ClippedEpsilonModel: lo > hi");
}

ImageTensor ClippedEpsilonModel::predict(const ImageTensor& x_t, int t) const {
  return clip_epsilon(x_t, inner_.predict(x_t, t), t, lo_, hi_, schedule_);
}

ImageTensor encode(const ImageTensor& x0, int levels, const EpsilonModel& model,
                   const Schedule& schedule) {
  check_levels(levels, schedule, "encode");
  ImageTensor x = x0;
  for (int t = 0; t < levels; ++t) {
    x = encode_step(x, model.predict(x, t), t, schedule);
  }
  return x;
}

ImageTensor decode(const ImageTensor& x_levels, int levels,
                   const EpsilonModel& model, const std::optional<Guide>& guide,
                   const Schedule& schedule, const StepHook& hook) {
  check_levels(levels, schedule, "decode");
  const ImageTensor no_noise;
  ImageTensor x = x_levels;
  for (int t = levels; t >= 1; --t) {
    const ImageTensor eps = guided_prediction(x, t, model, guide, schedule);
    x = reverse_step(x, eps, t, 0.0, no_noise, schedule);
    if (hook) hook(t - 1, x);
  }
  return x;
}

ImageTensor decode_stochastic(const ImageTensor& x_levels, int levels,
                              const EpsilonModel& model,
                              const std::optional<Guide>& guide,
                              const Schedule& schedule, Rng& rng,
                              const StepHook& hook) {
  check_levels(levels, schedule, "decode_stochastic");
  ImageTensor x = x_levels;
  for (int t = levels; t >= 1; --t) {
    const ImageTensor eps = guided_prediction(x, t, model, guide, schedule);
    const ImageTensor noise = standard_normal(x.shape(), rng);
    x = reverse_step(x, eps, t, schedule.sigma(t), noise, schedule);
    if (hook) hook(t - 1, x);
  }
  return x;
}

}  // namespace diffano
