#pragma once

#include <cstdint>
#include <random>

#include "diffano/image.hpp"

namespace diffano {

using Rng = std::mt19937_64;

/// Fills a tensor with independent N(0, 1) draws.
ImageTensor standard_normal(const Shape& shape, Rng& rng);

/// Uniform integer in [lo, hi].
int uniform_int(Rng& rng, int lo, int hi);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

}  // namespace diffano
