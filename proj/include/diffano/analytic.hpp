#pragma once

#include <span>

#include "diffano/image.hpp"
#include "diffano/sampler.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

/// Data distribution N(mean, diag(var)) over images.
struct GaussianDataModel {
  ImageTensor mean;
  ImageTensor var;  // strictly positive, same shape as mean

  void validate() const;
};

/// Two Gaussian classes with prior P(h) = prior_h. Label 0 is class_h.
struct TwoClassModel {
  GaussianDataModel class_h;
  GaussianDataModel class_d;
  double prior_h = 0.5;

  void validate() const;
};

/// Minimum-MSE noise prediction E[eps | x_t] when x0 ~ N(mu, diag(v)):
/// sqrt(1 - abar) * (x - sqrt(abar) mu) / (abar v + 1 - abar). Zero at t = 0.
ImageTensor gaussian_epsilon(const ImageTensor& x_t, int t,
                             const GaussianDataModel& model,
                             const Schedule& schedule);

/// Posterior P(h | x_t) of class h under the noised two-class marginals.
double class_posterior(const ImageTensor& x_t, int t, const TwoClassModel& model,
                       int label, const Schedule& schedule);

/// Exact gradient of log P(label | x_t) for the Bayes classifier at level t.
ImageTensor analytic_class_grad(const ImageTensor& x_t, int t,
                                const TwoClassModel& model, int label,
                                const Schedule& schedule);

/// E[eps | x_t] for the two-class mixture (posterior-weighted per-class
/// predictions).
ImageTensor mixture_epsilon(const ImageTensor& x_t, int t,
                            const TwoClassModel& model,
                            const Schedule& schedule);

/// Per-pixel moments of a sample set. Variances are floored at `min_var`.
GaussianDataModel fit_gaussian(std::span<const ImageTensor> samples,
                               double min_var = 1e-4);

class GaussianEpsilonModel final : public EpsilonModel {
 public:
  GaussianEpsilonModel(GaussianDataModel model, const Schedule& schedule);
  ImageTensor predict(const ImageTensor& x_t, int t) const override;

 private:
  GaussianDataModel model_;
  const Schedule& schedule_;
};

class MixtureEpsilonModel final : public EpsilonModel {
 public:
  MixtureEpsilonModel(TwoClassModel model, const Schedule& schedule);
  ImageTensor predict(const ImageTensor& x_t, int t) const override;

 private:
  TwoClassModel model_;
  const Schedule& schedule_;
};

class AnalyticClassifier final : public ClassGradModel {
 public:
  AnalyticClassifier(TwoClassModel model, const Schedule& schedule);
  ImageTensor log_prob_grad(const ImageTensor& x_t, int t,
                            int label) const override;
  double posterior(const ImageTensor& x_t, int t, int label) const;

 private:
  TwoClassModel model_;
  const Schedule& schedule_;
};

}  // namespace diffano
