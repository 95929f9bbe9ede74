#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "diffano/image.hpp"

namespace diffano {

/// Per-pixel boolean mask, row-major H x W.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, bool fill = false);
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

  /// Nonzero pixels of a single-channel tensor.
  static BinaryMask from_image(const ImageTensor& image);
  /// Pixels with value strictly greater than `threshold`.
  static BinaryMask threshold(const ImageTensor& map, double threshold);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t count() const;
  bool empty_mask() const { return count() == 0; }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
  bool at(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }

  ImageTensor to_image() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline constexpr int kDefaultOtsuBins = 256;

/// Histogram over [min, max] in `bins` bins; returns the bin edge maximizing
/// the between-class variance (first maximum on ties). A constant input
/// returns the constant.
double otsu_threshold(std::span<const double> values, int bins = kDefaultOtsuBins);

/// 2|A n B| / (|A| + |B|), with dice(empty, empty) = 1.
double dice(const BinaryMask& pred, const BinaryMask& truth);

class SingleClassError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mann-Whitney AUROC, ties counted one half. O(n log n).
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

enum class OtsuMode {
  kPerImage,    // one threshold per anomaly map
  kSetAverage,  // mean of the per-image thresholds, applied to every map
};

struct EvalItem {
  ImageTensor anomaly_map;          // single channel
  double score = 0.0;               // image-level score
  int label = 0;                    // 0 healthy, 1 diseased
  std::optional<BinaryMask> mask;   // pixel ground truth when available
};

struct EvalSummary {
  double mean_dice = 0.0;    // over diseased images with masks
  double pixel_auroc = 0.0;  // pooled over diseased-image pixels
  double image_auroc = 0.0;  // from per-image scores
  std::size_t n_images = 0;
  std::size_t n_diseased = 0;
  bool has_pixel_metrics = false;
  bool has_image_auroc = false;
  std::vector<double> per_image_dice;  // aligned with diseased inputs
};

EvalSummary evaluate_set(std::span<const EvalItem> items,
                         OtsuMode mode = OtsuMode::kPerImage,
                         int bins = kDefaultOtsuBins);

}  // namespace diffano
