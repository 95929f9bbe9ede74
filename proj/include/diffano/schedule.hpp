#pragma once

#include <vector>

namespace diffano {

/// Diffusion variance schedule with all per-timestep constants precomputed.
///
/// Timesteps are 1-based (t = 1..T). `alpha_bar(0)` is defined as exactly 1
/// so the first encoding step and the last decoding step are well defined.
/// Immutable after construction.
class Schedule {
 public:
  /// Builds from explicit betas; each must lie in (0, 1).
  explicit Schedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }

  double beta(int t) const;
  double alpha(int t) const;
  /// Cumulative product of alpha up to t, for t in [0, T].
  double alpha_bar(int t) const;

  /// DDPM posterior standard deviation using the cumulative products:
  /// sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1}).
  double sigma(int t) const;

 private:
  void check_step(int t) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;  // index 0 holds 1.0
};

/// Linear ramp of betas from beta_start to beta_end inclusive over t = 1..T.
Schedule linear_beta_schedule(int steps, double beta_start = 1e-4,
                              double beta_end = 0.02);

double sigma_ddpm(const Schedule& schedule, int t);

/// sigma_t evaluated directly from two cumulative products.
double sigma_from_alpha_bars(double alpha_bar_prev, double alpha_bar_t);

}  // namespace diffano
