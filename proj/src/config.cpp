#include "diffano/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace diffano {

using nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects anything left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  void read_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key: " + name_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void need(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void check_hidden(const std::vector<int>& dims, const char* what) {
  need(!dims.empty(), std::string(what) + ": need at least one hidden layer");
  for (int d : dims) need(d > 0, std::string(what) + ": widths must be positive");
}

}  // namespace

std::string backend_name(Backend b) {
  return b == Backend::kAnalytic ? "analytic" : "trained";
}

Backend parse_backend(const std::string& name) {
  if (name == "analytic") return Backend::kAnalytic;
  if (name == "trained") return Backend::kTrained;
  throw ConfigError("model.backend must be analytic or trained, got '" + name + "'");
}

std::string otsu_mode_name(OtsuMode m) {
  return m == OtsuMode::kPerImage ? "per_image" : "set_average";
}

OtsuMode parse_otsu_mode(const std::string& name) {
  if (name == "per_image") return OtsuMode::kPerImage;
  if (name == "set_average") return OtsuMode::kSetAverage;
  throw ConfigError("eval.otsu must be per_image or set_average, got '" + name + "'");
}

void RunConfig::validate() const {
  need(schedule.steps >= 1, "schedule.steps must be >= 1");
  need(schedule.beta_start > 0 && schedule.beta_end < 1 &&
           schedule.beta_start <= schedule.beta_end,
       "schedule: need 0 < beta_start <= beta_end < 1");
  try {
    data.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  check_hidden(model.denoiser_hidden, "model.denoiser_hidden");
  check_hidden(model.classifier_hidden, "model.classifier_hidden");
  need(model.time_embed_dim >= 2 && model.time_embed_dim % 2 == 0,
       "model.time_embed_dim must be even and >= 2");
  need(model.data_std > 0, "model.data_std must be > 0");
  need(train.learning_rate > 0, "train.learning_rate must be > 0");
  need(train.batch_size >= 1, "train.batch_size must be >= 1");
  need(train.denoiser_iterations >= 0 && train.classifier_iterations >= 0,
       "train: iteration counts must be >= 0");
  need(train.adam_beta1 >= 0 && train.adam_beta1 < 1 && train.adam_beta2 >= 0 &&
           train.adam_beta2 < 1 && train.adam_epsilon > 0,
       "train: invalid Adam parameters");
  need(detect.scale >= 0, "detect.scale must be >= 0");
  need(detect.levels >= 0 && detect.levels <= schedule.steps,
       "detect.levels must be in [0, T] (0 means T/2)");
  need(detect.target_class == 0 || detect.target_class == 1,
       "detect.target_class must be 0 or 1");
  need(detect.split == "train" || detect.split == "test",
       "detect.split must be train or test");
  need(detect.trajectory_every >= 0, "detect.trajectory_every must be >= 0");
  need(!sweep.scales.empty(), "sweep.scales must not be empty");
  for (double s : sweep.scales) need(s >= 0, "sweep.scales must be >= 0");
  for (int l : sweep.levels) {
    need(l >= 1 && l <= schedule.steps, "sweep.levels must be in [1, T]");
  }
  need(eval.bins >= 2, "eval.bins must be >= 2");
  need(default_levels() >= 1, "detect.levels resolves to 0; T too small");
}

Schedule RunConfig::make_schedule() const {
  return linear_beta_schedule(schedule.steps, schedule.beta_start, schedule.beta_end);
}

int RunConfig::default_levels() const {
  return detect.levels > 0 ? detect.levels : schedule.steps / 2;
}

std::vector<int> RunConfig::sweep_levels() const {
  if (!sweep.levels.empty()) return sweep.levels;
  const int t = schedule.steps;
  std::vector<int> out;
  for (int l : {t / 4, t / 2, 3 * t / 4}) {
    if (l >= 1 && (out.empty() || out.back() != l)) out.push_back(l);
  }
  return out;
}

std::filesystem::path RunConfig::denoiser_path() const {
  return model.denoiser_checkpoint.empty() ? output_dir / "denoiser.ckpt"
                                           : model.denoiser_checkpoint;
}

std::filesystem::path RunConfig::classifier_path() const {
  return model.classifier_checkpoint.empty() ? output_dir / "classifier.ckpt"
                                             : model.classifier_checkpoint;
}

TrainConfig RunConfig::denoiser_train_config() const {
  TrainConfig c;
  c.learning_rate = train.learning_rate;
  c.batch_size = train.batch_size;
  c.iterations = train.denoiser_iterations;
  c.seed = seed;
  c.hidden = model.denoiser_hidden;
  c.time_embed_dim = model.time_embed_dim;
  c.data_std = model.data_std;
  c.adam_beta1 = train.adam_beta1;
  c.adam_beta2 = train.adam_beta2;
  c.adam_epsilon = train.adam_epsilon;
  return c;
}

TrainConfig RunConfig::classifier_train_config() const {
  TrainConfig c = denoiser_train_config();
  c.iterations = train.classifier_iterations;
  c.seed = seed + 1;
  c.hidden = model.classifier_hidden;
  return c;
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "config");
  root.read("seed", c.seed);
  root.read_path("dataset_dir", c.dataset_dir);
  root.read_path("output_dir", c.output_dir);

  if (const json* s = root.child("schedule")) {
    Section sec(*s, "schedule");
    sec.read("steps", c.schedule.steps);
    sec.read("beta_start", c.schedule.beta_start);
    sec.read("beta_end", c.schedule.beta_end);
    sec.finish();
  }
  if (const json* s = root.child("data")) {
    Section sec(*s, "data");
    sec.read("channels", c.data.channels);
    sec.read("height", c.data.height);
    sec.read("width", c.data.width);
    sec.read("train_healthy", c.data.train_healthy);
    sec.read("train_diseased", c.data.train_diseased);
    sec.read("test_healthy", c.data.test_healthy);
    sec.read("test_diseased", c.data.test_diseased);
    sec.read("lesion_offset", c.data.lesion_offset);
    sec.read("lesion_radius_min", c.data.lesion_radius_min);
    sec.read("lesion_radius_max", c.data.lesion_radius_max);
    sec.read("texture_amplitude", c.data.texture_amplitude);
    sec.finish();
  }
  if (const json* s = root.child("model")) {
    Section sec(*s, "model");
    std::string backend = backend_name(c.model.backend);
    sec.read("backend", backend);
    c.model.backend = parse_backend(backend);
    sec.read("denoiser_hidden", c.model.denoiser_hidden);
    sec.read("classifier_hidden", c.model.classifier_hidden);
    sec.read("time_embed_dim", c.model.time_embed_dim);
    sec.read("data_std", c.model.data_std);
    sec.read_path("denoiser_checkpoint", c.model.denoiser_checkpoint);
    sec.read_path("classifier_checkpoint", c.model.classifier_checkpoint);
    sec.finish();
  }
  if (const json* s = root.child("train")) {
    Section sec(*s, "train");
    sec.read("learning_rate", c.train.learning_rate);
    sec.read("batch_size", c.train.batch_size);
    sec.read("denoiser_iterations", c.train.denoiser_iterations);
    sec.read("classifier_iterations", c.train.classifier_iterations);
    sec.read("adam_beta1", c.train.adam_beta1);
    sec.read("adam_beta2", c.train.adam_beta2);
    sec.read("adam_epsilon", c.train.adam_epsilon);
    sec.finish();
  }
  if (const json* s = root.child("detect")) {
    Section sec(*s, "detect");
    sec.read("scale", c.detect.scale);
    sec.read("levels", c.detect.levels);
    sec.read("target_class", c.detect.target_class);
    sec.read("split", c.detect.split);
    sec.read("clip_denoised", c.detect.clip_denoised);
    sec.read("write_images", c.detect.write_images);
    sec.read("trajectory_every", c.detect.trajectory_every);
    sec.finish();
  }
  if (const json* s = root.child("sweep")) {
    Section sec(*s, "sweep");
    sec.read("scales", c.sweep.scales);
    sec.read("levels", c.sweep.levels);
    sec.finish();
  }
  if (const json* s = root.child("eval")) {
    Section sec(*s, "eval");
    std::string mode = otsu_mode_name(c.eval.otsu);
    sec.read("otsu", mode);
    c.eval.otsu = parse_otsu_mode(mode);
    sec.read("bins", c.eval.bins);
    sec.finish();
  }
  root.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dataset_dir"] = c.dataset_dir.string();
  j["output_dir"] = c.output_dir.string();
  j["schedule"] = {{"steps", c.schedule.steps},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["data"] = {{"channels", c.data.channels},
               {"height", c.data.height},
               {"width", c.data.width},
               {"train_healthy", c.data.train_healthy},
               {"train_diseased", c.data.train_diseased},
               {"test_healthy", c.data.test_healthy},
               {"test_diseased", c.data.test_diseased},
               {"lesion_offset", c.data.lesion_offset},
               {"lesion_radius_min", c.data.lesion_radius_min},
               {"lesion_radius_max", c.data.lesion_radius_max},
               {"texture_amplitude", c.data.texture_amplitude}};
  j["model"] = {{"backend", backend_name(c.model.backend)},
                {"denoiser_hidden", c.model.denoiser_hidden},
                {"classifier_hidden", c.model.classifier_hidden},
                {"time_embed_dim", c.model.time_embed_dim},
                {"data_std", c.model.data_std},
                {"denoiser_checkpoint", c.model.denoiser_checkpoint.string()},
                {"classifier_checkpoint", c.model.classifier_checkpoint.string()}};
  j["train"] = {{"learning_rate", c.train.learning_rate},
                {"batch_size", c.train.batch_size},
                {"denoiser_iterations", c.train.denoiser_iterations},
                {"classifier_iterations", c.train.classifier_iterations},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_epsilon", c.train.adam_epsilon}};
  j["detect"] = {{"scale", c.detect.scale},
                 {"levels", c.detect.levels},
                 {"target_class", c.detect.target_class},
                 {"split", c.detect.split},
                 {"clip_denoised", c.detect.clip_denoised},
                 {"write_images", c.detect.write_images},
                 {"trajectory_every", c.detect.trajectory_every}};
  j["sweep"] = {{"scales", c.sweep.scales}, {"levels", c.sweep.levels}};
  j["eval"] = {{"otsu", otsu_mode_name(c.eval.otsu)}, {"bins", c.eval.bins}};
  return j.dump(2) + "\n";
}

}  // namespace diffano
