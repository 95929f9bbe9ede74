#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffano/data.hpp"
#include "diffano/metrics.hpp"
#include "diffano/models.hpp"
#include "diffano/schedule.hpp"

namespace diffano {

/// Bad config file, unknown key or out-of-range value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Backend { kAnalytic, kTrained };

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct ModelConfig {
  Backend backend = Backend::kTrained;
  std::vector<int> denoiser_hidden{512, 512};
  std::vector<int> classifier_hidden{256, 256};
  int time_embed_dim = 32;
  double data_std = 0.2;
  // Empty means <output_dir>/denoiser.ckpt and <output_dir>/classifier.ckpt.
  std::filesystem::path denoiser_checkpoint;
  std::filesystem::path classifier_checkpoint;
};

struct TrainSection {
  double learning_rate = 1e-3;
  int batch_size = 10;
  int denoiser_iterations = 10000;
  int classifier_iterations = 20000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

struct DetectSection {
  double scale = 100.0;
  int levels = 0;  // 0 means T/2
  int target_class = 0;
  std::string split = "test";
  bool clip_denoised = true;  // applies to detect and sweep
  bool write_images = true;
  int trajectory_every = 0;  // dump every k-th x_t of the first image; 0 = off
};

struct SweepSection {
  std::vector<double> scales{5, 10, 20, 50, 100, 250, 500, 750};
  std::vector<int> levels;  // empty means {T/4, T/2, 3T/4}
};

struct EvalSection {
  OtsuMode otsu = OtsuMode::kPerImage;
  int bins = kDefaultOtsuBins;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path dataset_dir = "data";
  std::filesystem::path output_dir = "run";
  ScheduleConfig schedule;
  PhantomConfig data;
  ModelConfig model;
  TrainSection train;
  DetectSection detect;
  SweepSection sweep;
  EvalSection eval;

  /// Range checks across all sections. Throws ConfigError.
  void validate() const;

  Schedule make_schedule() const;
  int default_levels() const;
  std::vector<int> sweep_levels() const;
  std::filesystem::path denoiser_path() const;
  std::filesystem::path classifier_path() const;
  TrainConfig denoiser_train_config() const;
  TrainConfig classifier_train_config() const;
};

/// Parses JSON text. Keys missing from the text keep their defaults; unknown
/// keys and type mismatches throw ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Full JSON rendering with every key, suitable for re-running.
std::string config_to_json(const RunConfig& cfg);

std::string backend_name(Backend b);
Backend parse_backend(const std::string& name);
std::string otsu_mode_name(OtsuMode m);
OtsuMode parse_otsu_mode(const std::string& name);

}  // namespace diffano
