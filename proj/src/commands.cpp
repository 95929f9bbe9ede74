#include "diffano/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffano/analytic.hpp"
#include "diffano/models.hpp"

namespace diffano {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

// Snapshot + timings bookkeeping shared by all commands.
class RunLog {
 public:
  RunLog(const RunConfig& cfg, std::string command)
      : dir_(cfg.output_dir), command_(std::move(command)) {
    ensure_dir(dir_);
    write_text(dir_ / (command_ + ".config.json"), config_to_json(cfg));
  }
  void stage(const std::string& name, double seconds) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", seconds);
    rows_ += command_ + "," + name + "," + buf + "\n";
    write_text(dir_ / (command_ + ".timings.csv"), "command,stage,seconds\n" + rows_);
  }

 private:
  fs::path dir_;
  std::string command_;
  std::string rows_;
};

void require_dataset(const RunConfig& cfg) {
  if (!fs::exists(cfg.dataset_dir / "manifest.json")) {
    throw ConfigError("dataset_dir " + cfg.dataset_dir.string() +
                      " has no manifest.json (run gen-data first)");
  }
}

const std::vector<ToySample>& split_of(const Dataset& ds, const std::string& split) {
  return split == "train" ? ds.train : ds.test;
}

std::vector<int> expected_dims(const Shape& shape, int embed,
                               const std::vector<int>& hidden, int out) {
  std::vector<int> dims{static_cast<int>(shape.size()) + embed};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

Checkpoint load_checked(const fs::path& path, const std::vector<int>& dims,
                        const RunConfig& cfg) {
  if (!fs::exists(path)) {
    throw ConfigError("checkpoint " + path.string() + " not found (run train first)");
  }
  Checkpoint ck = load_checkpoint(path, dims, cfg.schedule.steps);
  if (ck.net.time_embed_dim() != cfg.model.time_embed_dim) {
    throw CheckpointError(path.string() + ": time embedding width differs from config");
  }
  return ck;
}

std::string csv_header(const std::vector<std::string>& cols) {
  std::string s;
  for (std::size_t i = 0; i < cols.size(); ++i) s += (i ? "," : "") + cols[i];
  return s + "\n";
}

std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string indexed(std::size_t i, const char* suffix) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%05zu%s", i, suffix);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string format_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ModelBundle load_models(const RunConfig& cfg, const Dataset& dataset) {
  ModelBundle b;
  b.schedule = std::make_unique<Schedule>(cfg.make_schedule());
  const Shape shape = cfg.data.shape();
  if (cfg.model.backend == Backend::kAnalytic) {
    std::vector<ImageTensor> healthy, diseased;
    for (const auto& s : dataset.train) {
      (s.label == kHealthyClass ? healthy : diseased).push_back(s.image);
    }
    if (healthy.empty() || diseased.empty()) {
      throw ConfigError("analytic backend needs both classes in the training split");
    }
    const double prior_h =
        static_cast<double>(healthy.size()) / static_cast<double>(dataset.train.size());
    TwoClassModel model{fit_gaussian(healthy), fit_gaussian(diseased), prior_h};
    b.eps = std::make_unique<MixtureEpsilonModel>(model, *b.schedule);
    b.classifier = std::make_unique<AnalyticClassifier>(model, *b.schedule);
    return b;
  }
  const int width = static_cast<int>(shape.size());
  Checkpoint den = load_checked(
      cfg.denoiser_path(),
      expected_dims(shape, cfg.model.time_embed_dim, cfg.model.denoiser_hidden, width),
      cfg);
  Checkpoint cls = load_checked(
      cfg.classifier_path(),
      expected_dims(shape, cfg.model.time_embed_dim, cfg.model.classifier_hidden, 2),
      cfg);
  if (!(den.data_std > 0)) {
    throw CheckpointError(cfg.denoiser_path().string() + ": not a denoiser checkpoint");
  }
  b.eps = std::make_unique<TrainedEpsilonModel>(Denoiser{std::move(den.net), den.data_std},
                                                *b.schedule);
  b.classifier = std::make_unique<TrainedClassifier>(std::move(cls.net));
  return b;
}

Dataset cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  RunLog log(cfg, "gen-data");
  const auto start = Clock::now();
  Dataset ds = generate_toy_dataset(cfg.data, cfg.seed, cfg.dataset_dir);
  log.stage("generate", seconds_since(start));
  return ds;
}

TrainOutcome cmd_train(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.model.backend == Backend::kAnalytic) {
    throw ConfigError("train: the analytic backend has no parameters to train");
  }
  require_dataset(cfg);
  RunLog log(cfg, "train");
  const Dataset ds = load_dataset(cfg.dataset_dir);
  if (ds.manifest.generation.shape() != cfg.data.shape()) {
    throw ConfigError("train: dataset image shape differs from config data section");
  }
  const Schedule schedule = cfg.make_schedule();
  const std::vector<ImageTensor> images = images_of(ds.train);
  const std::vector<int> labels = labels_of(ds.train);

  TrainOutcome out;
  auto start = Clock::now();
  out.denoiser = train_denoiser(images, schedule, cfg.denoiser_train_config());
  log.stage("denoiser", seconds_since(start));
  start = Clock::now();
  out.classifier = train_classifier(images, labels, schedule, cfg.classifier_train_config());
  log.stage("classifier", seconds_since(start));

  for (const fs::path& p : {cfg.denoiser_path(), cfg.classifier_path()}) {
    if (p.has_parent_path()) ensure_dir(p.parent_path());
  }
  save_checkpoint(cfg.denoiser_path(), out.denoiser.model.net, schedule.steps(),
                  out.denoiser.model.data_std);
  save_checkpoint(cfg.classifier_path(), out.classifier.net, schedule.steps());

  std::string csv = csv_header({"model", "iteration", "loss"});
  for (const auto& r : out.denoiser.curve) {
    csv += "denoiser," + std::to_string(r.iteration) + "," + format_exact(r.loss) + "\n";
  }
  for (const auto& r : out.classifier.curve) {
    csv += "classifier," + std::to_string(r.iteration) + "," + format_exact(r.loss) + "\n";
  }
  write_text(cfg.output_dir / "loss.csv", csv);
  return out;
}

std::vector<DetectionResult> cmd_detect(const RunConfig& cfg,
                                        const std::optional<fs::path>& image,
                                        unsigned workers) {
  cfg.validate();
  require_dataset(cfg);
  if (image && !fs::exists(*image)) {
    throw ConfigError("input image " + image->string() + " not found");
  }
  RunLog log(cfg, "detect");
  auto start = Clock::now();
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const ModelBundle models = load_models(cfg, ds);
  log.stage("load", seconds_since(start));

  std::vector<ImageTensor> inputs;
  std::vector<int> labels;
  if (image) {
    inputs.push_back(load_clean_image(*image));
    if (inputs.back().shape() != cfg.data.shape()) {
      throw ConfigError("input image shape " + inputs.back().shape().str() +
                        " differs from the model's " + cfg.data.shape().str());
    }
    labels.push_back(-1);
  } else {
    const auto& samples = split_of(ds, cfg.detect.split);
    inputs = images_of(samples);
    labels = labels_of(samples);
  }

  const DetectionParams params{cfg.detect.scale, cfg.default_levels(),
                               cfg.detect.target_class, cfg.detect.clip_denoised};
  const fs::path dir = cfg.output_dir / "detect";
  ensure_dir(dir);
  StepHook hook;
  if (cfg.detect.trajectory_every > 0) {
    ensure_dir(dir / "trajectory");
    const int every = cfg.detect.trajectory_every;
    hook = [&dir, every](int t, const ImageTensor& x) {
      if (t % every == 0) save_image(dir / "trajectory" / indexed(t, ".img"), x);
    };
  }

  start = Clock::now();
  if (workers == 0) workers = worker_count_from_env();
  std::vector<DetectionResult> results(inputs.size());
  parallel_for(inputs.size(), workers, [&](std::size_t i) {
    results[i] = detect(inputs[i], params, *models.eps, *models.classifier,
                        *models.schedule, i == 0 ? hook : StepHook{});
  });
  log.stage("detect", seconds_since(start));

  std::string csv = csv_header({"index", "label", "score", "s", "L", "h"});
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    csv += std::to_string(i) + "," + std::to_string(labels[i]) + "," +
           format_exact(r.score) + "," + format_g6(params.scale) + "," +
           std::to_string(params.levels) + "," + std::to_string(params.target_class) + "\n";
    save_image(dir / indexed(i, "_map.img"), r.anomaly_map);
    if (cfg.detect.write_images) {
      save_pgm(dir / indexed(i, "_input.pgm"), r.input, 0.0, 1.0);
      save_pgm(dir / indexed(i, "_synthetic.pgm"), r.synthetic, 0.0, 1.0);
      save_pgm(dir / indexed(i, "_map.pgm"), r.anomaly_map);
    }
  }
  write_text(dir / "detect.csv", csv);
  return results;
}

EvalSummary cmd_eval(const RunConfig& cfg, const fs::path& results_dir) {
  cfg.validate();
  require_dataset(cfg);
  const fs::path csv_path = results_dir / "detect.csv";
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("no detect.csv in " + results_dir.string());
  RunLog log(cfg, "eval");
  const auto start = Clock::now();
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const auto& samples = split_of(ds, cfg.detect.split);

  std::string line;
  std::getline(in, line);
  if (line != "index,label,score,s,L,h") {
    throw DataError(csv_path.string() + ": unexpected header");
  }
  std::vector<EvalItem> items;
  std::vector<std::size_t> indices;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6) throw DataError(csv_path.string() + ": malformed row '" + line + "'");
    std::size_t idx;
    int label;
    double score;
    try {
      idx = std::stoul(cells[0]);
      label = std::stoi(cells[1]);
      score = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw DataError(csv_path.string() + ": malformed row '" + line + "'");
    }
    if (idx >= samples.size() || samples[idx].label != label) {
      throw ManifestMismatchError(csv_path.string() + ": row " + cells[0] +
                                  " does not match the " + cfg.detect.split + " split");
    }
    EvalItem item{load_image(results_dir / indexed(idx, "_map.img")), score, label, {}};
    if (label == kDiseasedClass) item.mask = samples[idx].mask;
    items.push_back(std::move(item));
    indices.push_back(idx);
  }
  if (items.empty()) throw DataError(csv_path.string() + ": no rows");

  const EvalSummary s = evaluate_set(items, cfg.eval.otsu, cfg.eval.bins);
  std::string out = csv_header(
      {"mean_dice", "pixel_auroc", "image_auroc", "n_images", "n_diseased"});
  out += format_g6(s.mean_dice) + "," + format_g6(s.pixel_auroc) + "," +
         format_g6(s.image_auroc) + "," + std::to_string(s.n_images) + "," +
         std::to_string(s.n_diseased) + "\n";
  write_text(results_dir / "eval.csv", out);

  std::string per = csv_header({"index", "dice"});
  std::size_t k = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].label != kDiseasedClass) continue;
    per += std::to_string(indices[i]) + "," + format_g6(s.per_image_dice.at(k++)) + "\n";
  }
  write_text(results_dir / "eval_per_image.csv", per);
  log.stage("eval", seconds_since(start));
  return s;
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, unsigned workers) {
  cfg.validate();
  require_dataset(cfg);
  RunLog log(cfg, "sweep");
  auto start = Clock::now();
  const Dataset ds = load_dataset(cfg.dataset_dir);
  const ModelBundle models = load_models(cfg, ds);
  const auto& samples = split_of(ds, cfg.detect.split);
  const std::vector<ImageTensor> inputs = images_of(samples);
  const std::vector<int> labels = labels_of(samples);
  std::vector<std::optional<BinaryMask>> masks;
  for (const auto& s : samples) masks.emplace_back(s.mask);
  log.stage("load", seconds_since(start));

  std::vector<SweepRow> rows;
  for (int l : cfg.sweep_levels()) {
    for (double s : cfg.sweep.scales) rows.push_back({s, l, {}});
  }
  start = Clock::now();
  if (workers == 0) workers = worker_count_from_env();
  parallel_for(rows.size(), workers, [&](std::size_t i) {
    const DetectionParams p{rows[i].scale, rows[i].levels, cfg.detect.target_class,
                            cfg.detect.clip_denoised};
    const auto results =
        detect_batch(inputs, p, *models.eps, *models.classifier, *models.schedule, 1);
    rows[i].summary = evaluate_results(results, labels, masks, cfg.eval.otsu, cfg.eval.bins);
  });
  log.stage("sweep", seconds_since(start));

  std::string csv =
      csv_header({"s", "L", "mean_dice", "pixel_auroc", "image_auroc", "n_images"});
  for (const auto& r : rows) {
    csv += format_g6(r.scale) + "," + std::to_string(r.levels) + "," +
           format_g6(r.summary.mean_dice) + "," + format_g6(r.summary.pixel_auroc) + "," +
           format_g6(r.summary.image_auroc) + "," + std::to_string(r.summary.n_images) +
           "\n";
  }
  write_text(cfg.output_dir / "sweep.csv", csv);
  return rows;
}

}  // namespace diffano
