#include "diffano/forward_process.hpp"

#include <cmath>

namespace diffano {

ImageTensor q_sample(const ImageTensor& x0, int t, const ImageTensor& eps,
                     const Schedule& schedule) {
  require_same_shape(x0, eps, "q_sample");
  const double abar = schedule.alpha_bar(t);
  if (t < 1) schedule.beta(t);  // bounds check: t = 0 is not a noising step
  return linear_combination(std::sqrt(abar), x0, std::sqrt(1.0 - abar), eps);
}

ImageTensor q_step(const ImageTensor& x_prev, int t, const ImageTensor& eps,
                   const Schedule& schedule) {
  require_same_shape(x_prev, eps, "q_step");
  const double beta = schedule.beta(t);
  return linear_combination(std::sqrt(1.0 - beta), x_prev, std::sqrt(beta),
                            eps);
}

}  // namespace diffano
