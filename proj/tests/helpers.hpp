#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "diffano/image.hpp"
#include "diffano/random.hpp"

namespace testing {

inline diffano::ImageTensor uniform_image(const diffano::Shape& shape,
                                          diffano::Rng& rng, double lo = 0.0,
                                          double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  diffano::ImageTensor x(shape);
  for (auto& v : x.data()) v = u(rng);
  return x;
}

inline double rel_err(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-300);
  return std::abs(got - want) / scale;
}

/// Relative error with an absolute floor, for gradient comparisons where
/// individual entries can be near zero.
inline double grad_err(double got, double want, double floor = 1e-6) {
  return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("diffano_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
