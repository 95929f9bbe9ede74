#include "diffano/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffano {

Schedule::Schedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) throw std::invalid_argument("Schedule: T must be >= 1");
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size() + 1);
  alpha_bar_[0] = 1.0;
  for (std::size_t i = 0; i < beta_.size(); ++i) {
    const double b = beta_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw std::invalid_argument("Schedule: beta_" + std::to_string(i + 1) +
                                  " outside (0, 1)");
    }
    alpha_[i] = 1.0 - b;
    alpha_bar_[i + 1] = alpha_bar_[i] * alpha_[i];
  }
}

void Schedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("Schedule: timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(steps()) + "]");
  }
}

double Schedule::beta(int t) const {
  check_step(t);
  return beta_[t - 1];
}

double Schedule::alpha(int t) const {
  check_step(t);
  return alpha_[t - 1];
}

double Schedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) {
    throw std::out_of_range("Schedule: timestep " + std::to_string(t) +
                            " outside [0, " + std::to_string(steps()) + "]");
  }
  return alpha_bar_[t];
}

double Schedule::sigma(int t) const {
  check_step(t);
  return sigma_from_alpha_bars(alpha_bar_[t - 1], alpha_bar_[t]);
}

double sigma_from_alpha_bars(double alpha_bar_prev, double alpha_bar_t) {
  const double ratio = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t);
  const double shrink = 1.0 - alpha_bar_t / alpha_bar_prev;
  // Rounding can leave tiny negatives when the two products coincide.
  return std::sqrt(std::max(ratio, 0.0)) * std::sqrt(std::max(shrink, 0.0));
}

Schedule linear_beta_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("linear_beta_schedule: T < 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument(
        "linear_beta_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    const double span = beta_end - beta_start;
    for (int i = 0; i < steps; ++i) {
      betas[i] = beta_start + span * static_cast<double>(i) / (steps - 1);
    }
  }
  return Schedule(std::move(betas));
}

double sigma_ddpm(const Schedule& schedule, int t) { return schedule.sigma(t); }

}  // namespace diffano
