#include "diffano/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace diffano {

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), bits_(height * width, fill ? 1 : 0) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width,
                       std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != height * width) {
    throw std::invalid_argument("BinaryMask: bit count does not match shape");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryMask BinaryMask::from_image(const ImageTensor& image) {
  if (image.channels() != 1) {
    throw std::invalid_argument("BinaryMask: expected a single-channel image");
  }
  BinaryMask m(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) m.bits_[i] = image[i] != 0.0;
  return m;
}

BinaryMask BinaryMask::threshold(const ImageTensor& map, double threshold) {
  if (map.channels() != 1) {
    throw std::invalid_argument("BinaryMask: expected a single-channel map");
  }
  BinaryMask m(map.height(), map.width());
  for (std::size_t i = 0; i < map.size(); ++i) m.bits_[i] = map[i] > threshold;
  return m;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

ImageTensor BinaryMask::to_image() const {
  ImageTensor out(1, height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out[i] = bits_[i];
  return out;
}

double otsu_threshold(std::span<const double> values, int bins) {
  if (values.empty()) throw std::invalid_argument("otsu_threshold: empty input");
  if (bins < 2) throw std::invalid_argument("otsu_threshold: need >= 2 bins");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    throw std::invalid_argument("otsu_threshold: non-finite value");
  }
  if (lo == hi) return lo;

  // Bin k holds (edge_k, edge_{k+1}] so that "v > edge_k" selects bins >= k.
  const double range = hi - lo;
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    const double pos = (v - lo) / range * bins;
    const int k = std::clamp(static_cast<int>(std::ceil(pos)) - 1, 0, bins - 1);
    hist[k] += 1.0;
  }

  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int k = 0; k < bins; ++k) sum_all += k * hist[k];

  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  int best_cut = 1;
  for (int cut = 1; cut < bins; ++cut) {
    w0 += hist[cut - 1];
    sum0 += (cut - 1) * hist[cut - 1];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_cut = cut;
    }
  }
  return lo + range * best_cut / bins;
}

double dice(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width()) {
    throw std::invalid_argument("dice: mask shape mismatch");
  }
  std::size_t inter = 0;
  std::size_t a = 0;
  std::size_t b = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a += pred[i];
    b += truth[i];
    inter += pred[i] && truth[i];
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double auroc(std::span<const double> scores,
             std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auroc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l != 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw SingleClassError("auroc: need at least one positive and one negative");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks (1-based) of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

EvalSummary evaluate_set(std::span<const EvalItem> items, OtsuMode mode,
                         int bins) {
  if (items.empty()) throw std::invalid_argument("evaluate_set: no items");
  EvalSummary s;
  s.n_images = items.size();

  std::vector<std::size_t> diseased;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.anomaly_map.channels() != 1) {
      throw std::invalid_argument("evaluate_set: anomaly map " +
                                  std::to_string(i) + " is not single-channel");
    }
    if (it.mask && (it.mask->height() != it.anomaly_map.height() ||
                    it.mask->width() != it.anomaly_map.width())) {
      throw std::invalid_argument("evaluate_set: mask " + std::to_string(i) +
                                  " misaligned with its anomaly map");
    }
    if (it.label == 1) {
      ++s.n_diseased;
      if (it.mask) diseased.push_back(i);
    }
  }

  if (!diseased.empty()) {
    std::vector<double> thresholds;
    for (std::size_t i : diseased) {
      thresholds.push_back(otsu_threshold(items[i].anomaly_map.data(), bins));
    }
    if (mode == OtsuMode::kSetAverage) {
      const double avg =
          std::accumulate(thresholds.begin(), thresholds.end(), 0.0) /
          static_cast<double>(thresholds.size());
      std::fill(thresholds.begin(), thresholds.end(), avg);
    }
    std::vector<double> pooled_scores;
    std::vector<std::uint8_t> pooled_labels;
    for (std::size_t k = 0; k < diseased.size(); ++k) {
      const auto& it = items[diseased[k]];
      const BinaryMask pred = BinaryMask::threshold(it.anomaly_map, thresholds[k]);
      s.per_image_dice.push_back(dice(pred, *it.mask));
      for (std::size_t p = 0; p < it.anomaly_map.size(); ++p) {
        pooled_scores.push_back(it.anomaly_map[p]);
        pooled_labels.push_back((*it.mask)[p] ? 1 : 0);
      }
    }
    s.mean_dice = std::accumulate(s.per_image_dice.begin(),
                                  s.per_image_dice.end(), 0.0) /
                  static_cast<double>(s.per_image_dice.size());
    const auto positives = std::count(pooled_labels.begin(), pooled_labels.end(), 1);
    if (positives > 0 && positives < static_cast<long>(pooled_labels.size())) {
      s.pixel_auroc = auroc(pooled_scores, pooled_labels);
      s.has_pixel_metrics = true;
    }
  }

  if (s.n_diseased > 0 && s.n_diseased < s.n_images) {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (const auto& it : items) {
      scores.push_back(it.score);
      labels.push_back(it.label == 1);
    }
    s.image_auroc = auroc(scores, labels);
    s.has_image_auroc = true;
  }
  return s;
}

}  // namespace diffano
