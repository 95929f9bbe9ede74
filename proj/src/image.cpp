#include "diffano/image.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace diffano {

std::string Shape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width);
}

ImageTensor::ImageTensor(Shape shape, double fill)
    : shape_(shape), data_(shape.size(), fill) {}

ImageTensor::ImageTensor(std::size_t channels, std::size_t height,
                         std::size_t width, double fill)
    : ImageTensor(Shape{channels, height, width}, fill) {}

ImageTensor::ImageTensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw std::invalid_argument("ImageTensor: data length " +
                                std::to_string(data_.size()) +
                                " does not match shape " + shape_.str());
  }
}

bool ImageTensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double ImageTensor::mean() const {
  if (data_.empty()) return 0.0;
  return std::accumulate(data_.begin(), data_.end(), 0.0) /
         static_cast<double>(data_.size());
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b,
                        const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
  }
}

ImageTensor linear_combination(double a, const ImageTensor& x, double b,
                               const ImageTensor& y) {
  require_same_shape(x, y, "linear_combination");
  ImageTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

ImageTensor scaled(const ImageTensor& x, double a) {
  ImageTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i];
  return out;
}

double l2_norm(const ImageTensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  return std::sqrt(acc);
}

double relative_l2_error(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "relative_l2_error");
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

ImageTensor extract_channel(const ImageTensor& x, std::size_t c) {
  if (c >= x.channels()) throw std::out_of_range("extract_channel");
  ImageTensor out(1, x.height(), x.width());
  const std::size_t plane = x.shape().plane();
  for (std::size_t i = 0; i < plane; ++i) out[i] = x[c * plane + i];
  return out;
}

}  // namespace diffano
