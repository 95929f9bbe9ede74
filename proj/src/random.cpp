#include "diffano/random.hpp"

namespace diffano {

ImageTensor standard_normal(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageTensor out(shape);
  for (double& v : out.data()) v = normal(rng);
  return out;
}

int uniform_int(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> dist(lo, hi);
  return dist(rng);
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace diffano
