#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffano/config.hpp"
#include "diffano/data.hpp"
#include "diffano/pipeline.hpp"
#include "diffano/sampler.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

/// Schedule plus the noise predictor and classifier selected by the config.
/// The models keep a reference to `schedule`, so the bundle is move-only.
struct ModelBundle {
  std::unique_ptr<Schedule> schedule;
  std::unique_ptr<EpsilonModel> eps;
  std::unique_ptr<ClassGradModel> classifier;
};

/// Analytic backend: two Gaussian classes fitted to the training split.
/// Trained backend: checkpoints from cfg (dims and T are checked).
ModelBundle load_models(const RunConfig& cfg, const Dataset& dataset);

struct TrainOutcome {
  DenoiserTrainResult denoiser;
  TrainResult classifier;
};

struct SweepRow {
  double scale;
  int levels;
  EvalSummary summary;
};

// Every command writes <output_dir>/<command>.config.json (the resolved
// config) and <output_dir>/<command>.timings.csv. All other outputs are
// deterministic for a fixed config in single-threaded mode.

/// Writes the toy dataset to cfg.dataset_dir.
Dataset cmd_gen_data(const RunConfig& cfg);

/// Trains the denoiser, then the classifier. Writes both checkpoints and
/// <output_dir>/loss.csv (model,iteration,loss).
TrainOutcome cmd_train(const RunConfig& cfg);

/// Detection over the configured split, or over one image file when `image`
/// is given. Writes <output_dir>/detect/detect.csv
/// (index,label,score,s,L,h), float32 anomaly maps NNNNN_map.img and, when
/// enabled, PGM previews of input, synthetic image and map.
std::vector<DetectionResult> cmd_detect(
    const RunConfig& cfg, const std::optional<std::filesystem::path>& image = {},
    unsigned workers = 0);

/// Scores a detect output directory against the dataset masks. Writes
/// <results_dir>/eval.csv and <results_dir>/eval_per_image.csv.
EvalSummary cmd_eval(const RunConfig& cfg, const std::filesystem::path& results_dir);

/// Grid over (L, s), L-major. Writes <output_dir>/sweep.csv with header
/// s,L,mean_dice,pixel_auroc,image_auroc,n_images.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, unsigned workers = 0);

/// Six significant digits, as used in the sweep and eval CSVs.
std::string format_g6(double v);

}  // namespace diffano
