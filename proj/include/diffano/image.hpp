#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace diffano {

/// Channel-major image dimensions (C x H x W).
struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense C x H x W array of doubles, stored channel-major.
///
/// Clean images live in [0,1]; noisy iterates x_t are unbounded. The
/// container itself enforces only the length invariant.
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Shape shape, double fill = 0.0);
  ImageTensor(std::size_t channels, std::size_t height, std::size_t width,
              double fill = 0.0);
  ImageTensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  bool all_finite() const;
  double mean() const;

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Throws std::invalid_argument naming `what` when the shapes differ.
void require_same_shape(const ImageTensor& a, const ImageTensor& b,
                        const char* what);

/// a*x + b*y elementwise.
ImageTensor linear_combination(double a, const ImageTensor& x, double b,
                               const ImageTensor& y);

ImageTensor scaled(const ImageTensor& x, double a);

/// Euclidean norm of all entries.
double l2_norm(const ImageTensor& x);

/// ||a - b|| / ||b||; returns ||a - b|| when b is zero.
double relative_l2_error(const ImageTensor& a, const ImageTensor& b);

/// Single-channel view of channel `c`.
ImageTensor extract_channel(const ImageTensor& x, std::size_t c);

}  // namespace diffano
