#include "diffano/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include "diffano/forward_process.hpp"
#include "diffano/random.hpp"

namespace diffano {

namespace {

void check_params(const DetectionParams& p, const Schedule& schedule) {
  if (p.levels < 1 || p.levels > schedule.steps()) {
    throw std::out_of_range("detect: noise level L=" + std::to_string(p.levels) +
                            " outside [1, " + std::to_string(schedule.steps()) +
                            "]");
  }
  if (!(p.scale >= 0.0)) throw std::invalid_argument("detect: s must be >= 0");
}

DetectionResult finish(const ImageTensor& x, ImageTensor x0,
                       const DetectionParams& params) {
  DetectionResult r;
  r.input = x;
  r.anomaly_map = anomaly_map(x, x0);
  r.synthetic = std::move(x0);
  r.score = r.anomaly_map.mean();
  r.params = params;
  return r;
}

}  // namespace

ImageTensor anomaly_map(const ImageTensor& x, const ImageTensor& x0) {
  require_same_shape(x, x0, "anomaly_map");
  ImageTensor a(1, x.height(), x.width());
  const std::size_t plane = x.shape().plane();
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] += std::abs(x[c * plane + i] - x0[c * plane + i]);
    }
  }
  return a;
}

DetectionResult detect(const ImageTensor& x, const DetectionParams& params,
                       const EpsilonModel& eps_model,
                       const ClassGradModel& class_model,
                       const Schedule& schedule, const StepHook& hook) {
  check_params(params, schedule);
  if (params.clip_denoised) {
    DetectionParams inner = params;
    inner.clip_denoised = false;
    const ClippedEpsilonModel clipped(eps_model, schedule);
    DetectionResult r = detect(x, inner, clipped, class_model, schedule, hook);
    r.params = params;
    return r;
  }
  const ImageTensor x_levels = encode(x, params.levels, eps_model, schedule);
  const Guide guide{class_model, {params.scale, params.target_class, true}};
  ImageTensor x0 =
      decode(x_levels, params.levels, eps_model, guide, schedule, hook);
  return finish(x, std::move(x0), params);
}

DetectionResult detect_stochastic_ablation(const ImageTensor& x,
                                           const DetectionParams& params,
                                           const EpsilonModel& eps_model,
                                           const ClassGradModel& class_model,
                                           const Schedule& schedule,
                                           std::uint64_t seed) {
  check_params(params, schedule);
  Rng rng(seed);
  const ImageTensor noise = standard_normal(x.shape(), rng);
  const ImageTensor x_levels = q_sample(x, params.levels, noise, schedule);
  const Guide guide{class_model, {params.scale, params.target_class, true}};
  const ClippedEpsilonModel clipped(eps_model, schedule);
  const EpsilonModel& model =
      params.clip_denoised ? static_cast<const EpsilonModel&>(clipped) : eps_model;
  ImageTensor x0 = decode_stochastic(x_levels, params.levels, model, guide,
                                     schedule, rng);
  return finish(x, std::move(x0), params);
}

unsigned worker_count_from_env() {
  if (const char* env = std::getenv("DIFFANO_WORKERS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min<std::size_t>(workers, n);
  for (std::size_t w = 0; w < count; ++w) pool.emplace_back(run);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<DetectionResult> detect_batch(std::span<const ImageTensor> inputs,
                                          const DetectionParams& params,
                                          const EpsilonModel& eps_model,
                                          const ClassGradModel& class_model,
                                          const Schedule& schedule,
                                          unsigned workers) {
  check_params(params, schedule);
  if (workers == 0) workers = worker_count_from_env();
  std::vector<DetectionResult> results(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t i) {
    results[i] = detect(inputs[i], params, eps_model, class_model, schedule);
  });
  return results;
}

EvalSummary evaluate_results(std::span<const DetectionResult> results,
                             std::span<const int> labels,
                             std::span<const std::optional<BinaryMask>> masks,
                             OtsuMode mode, int bins) {
  if (results.size() != labels.size() ||
      (!masks.empty() && masks.size() != results.size())) {
    throw std::invalid_argument("evaluate_results: results, labels and masks misaligned");
  }
  std::vector<EvalItem> items;
  items.reserve(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    EvalItem item{results[i].anomaly_map, results[i].score, labels[i], {}};
    if (!masks.empty()) item.mask = masks[i];
    items.push_back(std::move(item));
  }
  return evaluate_set(items, mode, bins);
}

}  // namespace diffano
