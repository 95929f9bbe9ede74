#include "diffano/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffano {

namespace {

// Noised marginal of one class at level t: N(sqrt(abar) mu, abar v + 1 - abar).
double log_density(const ImageTensor& x, const GaussianDataModel& m,
                   double abar) {
  const double sa = std::sqrt(abar);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double var = abar * m.var[i] + 1.0 - abar;
    const double d = x[i] - sa * m.mean[i];
    acc += d * d / var + std::log(2.0 * std::numbers::pi * var);
  }
  return -0.5 * acc;
}

ImageTensor score(const ImageTensor& x, const GaussianDataModel& m,
                  double abar) {
  const double sa = std::sqrt(abar);
  ImageTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = -(x[i] - sa * m.mean[i]) / (abar * m.var[i] + 1.0 - abar);
  }
  return out;
}

// Posterior of class h, computed in log space.
double posterior_h(const ImageTensor& x, const TwoClassModel& m, double abar) {
  const double lh = std::log(m.prior_h) + log_density(x, m.class_h, abar);
  const double ld = std::log1p(-m.prior_h) + log_density(x, m.class_d, abar);
  // 1 / (1 + exp(ld - lh))
  const double z = ld - lh;
  if (z > 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw std::invalid_argument("two-class model: label must be 0 or 1");
  }
}

}  // namespace

void GaussianDataModel::validate() const {
  require_same_shape(mean, var, "GaussianDataModel");
  for (double v : var.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument("GaussianDataModel: variance must be > 0");
    }
  }
}

void TwoClassModel::validate() const {
  class_h.validate();
  class_d.validate();
  require_same_shape(class_h.mean, class_d.mean, "TwoClassModel");
  if (!(prior_h > 0.0 && prior_h < 1.0)) {
    throw std::invalid_argument("TwoClassModel: prior_h must be in (0, 1)");
  }
}

ImageTensor gaussian_epsilon(const ImageTensor& x_t, int t,
                             const GaussianDataModel& model,
                             const Schedule& schedule) {
  require_same_shape(x_t, model.mean, "gaussian_epsilon");
  const double abar = schedule.alpha_bar(t);
  if (t == 0) return ImageTensor(x_t.shape());
  const double sa = std::sqrt(abar);
  const double sn = std::sqrt(1.0 - abar);
  ImageTensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = sn * (x_t[i] - sa * model.mean[i]) /
             (abar * model.var[i] + 1.0 - abar);
  }
  return out;
}

double class_posterior(const ImageTensor& x_t, int t, const TwoClassModel& model,
                       int label, const Schedule& schedule) {
  check_label(label);
  require_same_shape(x_t, model.class_h.mean, "class_posterior");
  const double ph = posterior_h(x_t, model, schedule.alpha_bar(t));
  return label == 0 ? ph : 1.0 - ph;
}

ImageTensor analytic_class_grad(const ImageTensor& x_t, int t,
                                const TwoClassModel& model, int label,
                                const Schedule& schedule) {
  check_label(label);
  require_same_shape(x_t, model.class_h.mean, "analytic_class_grad");
  const double abar = schedule.alpha_bar(t);
  const double ph = posterior_h(x_t, model, abar);
  const ImageTensor sh = score(x_t, model.class_h, abar);
  const ImageTensor sd = score(x_t, model.class_d, abar);
  // grad log P(h|x) = P(d|x) (s_h - s_d); grad log P(d|x) = P(h|x) (s_d - s_h)
  const double weight = label == 0 ? 1.0 - ph : -ph;
  ImageTensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = weight * (sh[i] - sd[i]);
  }
  return out;
}

ImageTensor mixture_epsilon(const ImageTensor& x_t, int t,
                            const TwoClassModel& model,
                            const Schedule& schedule) {
  const ImageTensor eh = gaussian_epsilon(x_t, t, model.class_h, schedule);
  const ImageTensor ed = gaussian_epsilon(x_t, t, model.class_d, schedule);
  const double ph = posterior_h(x_t, model, schedule.alpha_bar(t));
  return linear_combination(ph, eh, 1.0 - ph, ed);
}

GaussianDataModel fit_gaussian(std::span<const ImageTensor> samples,
                               double min_var) {
  if (samples.empty()) throw std::invalid_argument("fit_gaussian: no samples");
  const Shape shape = samples.front().shape();
  ImageTensor mean(shape);
  ImageTensor var(shape);
  for (const auto& s : samples) {
    if (s.shape() != shape) {
      throw std::invalid_argument("fit_gaussian: inconsistent shapes");
    }
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i];
  }
  const double n = static_cast<double>(samples.size());
  for (double& m : mean.data()) m /= n;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < var.size(); ++i) {
      const double d = s[i] - mean[i];
      var[i] += d * d;
    }
  }
  for (double& v : var.data()) v = std::max(v / n, min_var);
  return {std::move(mean), std::move(var)};
}

GaussianEpsilonModel::GaussianEpsilonModel(GaussianDataModel model,
                                           const Schedule& schedule)
    : model_(std::move(model)), schedule_(schedule) {
  model_.validate();
}

ImageTensor GaussianEpsilonModel::predict(const ImageTensor& x_t, int t) const {
  return gaussian_epsilon(x_t, t, model_, schedule_);
}

MixtureEpsilonModel::MixtureEpsilonModel(TwoClassModel model,
                                         const Schedule& schedule)
    : model_(std::move(model)), schedule_(schedule) {
  model_.validate();
}

ImageTensor MixtureEpsilonModel::predict(const ImageTensor& x_t, int t) const {
  return mixture_epsilon(x_t, t, model_, schedule_);
}

AnalyticClassifier::AnalyticClassifier(TwoClassModel model,
                                       const Schedule& schedule)
    : model_(std::move(model)), schedule_(schedule) {
  model_.validate();
}

ImageTensor AnalyticClassifier::log_prob_grad(const ImageTensor& x_t, int t,
                                              int label) const {
  return analytic_class_grad(x_t, t, model_, label, schedule_);
}

double AnalyticClassifier::posterior(const ImageTensor& x_t, int t,
                                     int label) const {
  return class_posterior(x_t, t, model_, label, schedule_);
}

}  // namespace diffano
