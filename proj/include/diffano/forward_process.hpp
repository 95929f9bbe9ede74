#pragma once

#include "diffano/image.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

// Noise is always supplied by the caller; both functions are pure.

/// Closed-form jump: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
ImageTensor q_sample(const ImageTensor& x0, int t, const ImageTensor& eps,
                     const Schedule& schedule);

/// One forward transition: sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * eps.
ImageTensor q_step(const ImageTensor& x_prev, int t, const ImageTensor& eps,
                   const Schedule& schedule);

}  // namespace diffano
