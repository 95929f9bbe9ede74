// Command-line front end: gen-data, train, detect, sweep, eval.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "diffano/commands.hpp"
#include "diffano/config.hpp"

namespace fs = std::filesystem;
using namespace diffano;

namespace {

struct Overrides {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
  std::optional<std::string> backend;
  std::optional<int> steps;
  std::optional<double> scale;
  std::optional<int> levels;
  std::optional<std::string> split;
  std::optional<int> denoiser_iterations;
  std::optional<int> classifier_iterations;
  std::optional<std::string> otsu;
  std::vector<double> scales;
  std::vector<int> level_grid;
  unsigned workers = 0;
};

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config_file.empty() ? RunConfig{} : load_config(o.config_file);
  if (o.seed) cfg.seed = *o.seed;
  if (o.data_dir) cfg.dataset_dir = *o.data_dir;
  if (o.out_dir) cfg.output_dir = *o.out_dir;
  if (o.backend) cfg.model.backend = parse_backend(*o.backend);
  if (o.steps) cfg.schedule.steps = *o.steps;
  if (o.scale) cfg.detect.scale = *o.scale;
  if (o.levels) cfg.detect.levels = *o.levels;
  if (o.split) cfg.detect.split = *o.split;
  if (o.denoiser_iterations) cfg.train.denoiser_iterations = *o.denoiser_iterations;
  if (o.classifier_iterations) cfg.train.classifier_iterations = *o.classifier_iterations;
  if (o.otsu) cfg.eval.otsu = parse_otsu_mode(*o.otsu);
  if (!o.scales.empty()) cfg.sweep.scales = o.scales;
  if (!o.level_grid.empty()) cfg.sweep.levels = o.level_grid;
  cfg.validate();
  return cfg;
}

// One machine-parsable line: "error <kind>: <message>".
int fail(const char* kind, const std::string& msg, int code) {
  std::fprintf(stderr, "error %s: %s\n", kind, msg.c_str());
  return code;
}

void print_summary(const EvalSummary& s) {
  std::printf("mean_dice=%s pixel_auroc=%s image_auroc=%s n_images=%zu\n",
              format_g6(s.mean_dice).c_str(), format_g6(s.pixel_auroc).c_str(),
              format_g6(s.image_auroc).c_str(), s.n_images);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-based weakly supervised anomaly detection on toy phantoms"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_file, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--data", o.data_dir, "Dataset directory");
  app.add_option("-o,--out", o.out_dir, "Output directory");
  app.add_option("--backend", o.backend, "analytic or trained");
  app.add_option("--steps", o.steps, "Diffusion steps T");
  app.add_option("--workers", o.workers,
                 "Worker threads (default: DIFFANO_WORKERS or 1)");

  auto* gen = app.add_subcommand("gen-data", "Generate the toy phantom dataset");
  auto* train = app.add_subcommand("train", "Train denoiser and classifier");
  train->add_option("--denoiser-iterations", o.denoiser_iterations);
  train->add_option("--classifier-iterations", o.classifier_iterations);

  auto* det = app.add_subcommand("detect", "Anomaly maps for a split or one image");
  std::string image;
  det->add_option("--image", image, "Single image file instead of a split");
  det->add_option("-s,--scale", o.scale, "Gradient scale s");
  det->add_option("-L,--levels", o.levels, "Noise level L (0 = T/2)");
  det->add_option("--split", o.split, "train or test");

  auto* sweep = app.add_subcommand("sweep", "Dice/AUROC over an (s, L) grid");
  sweep->add_option("--scales", o.scales, "Comma-separated s grid")->delimiter(',');
  sweep->add_option("--levels", o.level_grid, "Comma-separated L grid")->delimiter(',');
  sweep->add_option("--split", o.split, "train or test");
  sweep->add_option("--otsu", o.otsu, "per_image or set_average");

  auto* ev = app.add_subcommand("eval", "Score a detect output directory");
  std::string results;
  ev->add_option("--results", results, "Directory with detect.csv (default <out>/detect)");
  ev->add_option("--split", o.split, "train or test");
  ev->add_option("--otsu", o.otsu, "per_image or set_average");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  try {
    const RunConfig cfg = resolve(o);
    if (gen->parsed()) {
      const Dataset ds = cmd_gen_data(cfg);
      std::printf("wrote %zu train and %zu test samples to %s\n", ds.train.size(),
                  ds.test.size(), cfg.dataset_dir.string().c_str());
    } else if (train->parsed()) {
      const TrainOutcome t = cmd_train(cfg);
      std::printf("denoiser final loss %s, classifier final loss %s\n",
                  format_g6(t.denoiser.curve.empty() ? 0 : t.denoiser.curve.back().loss).c_str(),
                  format_g6(t.classifier.curve.empty() ? 0 : t.classifier.curve.back().loss).c_str());
    } else if (det->parsed()) {
      std::optional<fs::path> path;
      if (!image.empty()) path = image;
      const auto r = cmd_detect(cfg, path, o.workers);
      std::printf("scored %zu images into %s\n", r.size(),
                  (cfg.output_dir / "detect").string().c_str());
    } else if (sweep->parsed()) {
      const auto rows = cmd_sweep(cfg, o.workers);
      std::printf("wrote %zu grid points to %s\n", rows.size(),
                  (cfg.output_dir / "sweep.csv").string().c_str());
    } else if (ev->parsed()) {
      print_summary(cmd_eval(cfg, results.empty() ? cfg.output_dir / "detect" : fs::path(results)));
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const CheckpointError& e) {
    return fail("checkpoint", e.what(), 3);
  } catch (const DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const TrainingDiverged& e) {
    return fail("training", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
