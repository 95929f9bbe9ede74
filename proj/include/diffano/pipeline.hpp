#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "diffano/image.hpp"
#include "diffano/metrics.hpp"
#include "diffano/sampler.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

inline constexpr int kHealthyClass = 0;
inline constexpr int kDiseasedClass = 1;

struct DetectionParams {
  double scale = 100.0;  // s
  int levels = 500;      // L
  int target_class = kHealthyClass;
  // Keep the predicted clean image inside [0, 1] at every encode and decode
  // step (see ClippedEpsilonModel).
  bool clip_denoised = false;
};

struct DetectionResult {
  ImageTensor input;        // x
  ImageTensor synthetic;    // x_0 after guided decoding
  ImageTensor anomaly_map;  // single channel, >= 0
  double score = 0.0;       // mean of anomaly_map
  DetectionParams params;
};

/// Per-pixel sum over channels of |x - x0|.
ImageTensor anomaly_map(const ImageTensor& x, const ImageTensor& x0);

/// Encode to level L with the reverse ODE, decode with classifier guidance
/// toward the target class, and difference against the input.
DetectionResult detect(const ImageTensor& x, const DetectionParams& params,
                       const EpsilonModel& eps_model,
                       const ClassGradModel& class_model,
                       const Schedule& schedule, const StepHook& hook = {});

/// Ablation: one closed-form noising jump to level L, then stochastic guided
/// DDPM decoding (sigma = sigma_t).
DetectionResult detect_stochastic_ablation(const ImageTensor& x,
                                           const DetectionParams& params,
                                           const EpsilonModel& eps_model,
                                           const ClassGradModel& class_model,
                                           const Schedule& schedule,
                                           std::uint64_t seed);

/// Runs `detect` over a batch on `workers` threads (0 = DIFFANO_WORKERS or 1).
/// Output order follows input order.
std::vector<DetectionResult> detect_batch(std::span<const ImageTensor> inputs,
                                          const DetectionParams& params,
                                          const EpsilonModel& eps_model,
                                          const ClassGradModel& class_model,
                                          const Schedule& schedule,
                                          unsigned workers = 0);

/// Worker count from DIFFANO_WORKERS, defaulting to 1.
unsigned worker_count_from_env();

/// Runs fn(i) for i in [0, n) across `workers` threads.
void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& fn);

/// Pairs detection results with labels and optional masks for evaluation.
EvalSummary evaluate_results(std::span<const DetectionResult> results,
                             std::span<const int> labels,
                             std::span<const std::optional<BinaryMask>> masks,
                             OtsuMode mode = OtsuMode::kPerImage,
                             int bins = kDefaultOtsuBins);

}  // namespace diffano
