#include "diffano/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"

namespace diffano {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "image io assumes a little-endian host");

namespace {

constexpr char kImageMagic[4] = {'D', 'A', 'I', 'M'};
constexpr const char* kManifestName = "manifest.json";

// Per-channel contrast of the anatomy and of the lesion, cycled for C > 4.
constexpr std::array<double, 4> kTissueGain{1.0, 0.8, 0.65, 0.9};
constexpr std::array<double, 4> kLesionGain{1.0, 0.7, 1.0, 0.85};

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

json split_to_json(const SplitInfo& s) {
  return {{"healthy", s.healthy()}, {"diseased", s.diseased()}, {"labels", s.labels}};
}

json phantom_to_json(const PhantomConfig& c) {
  return {{"channels", c.channels},
          {"height", c.height},
          {"width", c.width},
          {"train_healthy", c.train_healthy},
          {"train_diseased", c.train_diseased},
          {"test_healthy", c.test_healthy},
          {"test_diseased", c.test_diseased},
          {"lesion_offset", c.lesion_offset},
          {"lesion_radius_min", c.lesion_radius_min},
          {"lesion_radius_max", c.lesion_radius_max},
          {"texture_amplitude", c.texture_amplitude}};
}

PhantomConfig phantom_from_json(const json& j) {
  PhantomConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.train_healthy = j.at("train_healthy").get<int>();
  c.train_diseased = j.at("train_diseased").get<int>();
  c.test_healthy = j.at("test_healthy").get<int>();
  c.test_diseased = j.at("test_diseased").get<int>();
  c.lesion_offset = j.at("lesion_offset").get<double>();
  c.lesion_radius_min = j.at("lesion_radius_min").get<double>();
  c.lesion_radius_max = j.at("lesion_radius_max").get<double>();
  c.texture_amplitude = j.at("texture_amplitude").get<double>();
  return c;
}

std::vector<ToySample> generate_split(const PhantomConfig& cfg, int healthy,
                                      int diseased, Rng& rng) {
  std::vector<ToySample> out;
  // Interleave classes so any prefix of a split stays roughly balanced.
  int h = 0;
  int d = 0;
  while (h < healthy || d < diseased) {
    const bool take_diseased =
        d < diseased && (h >= healthy || d * (healthy + diseased) < (h + d + 1) * diseased);
    out.push_back(draw_phantom(cfg, take_diseased, rng).sample);
    (take_diseased ? d : h)++;
  }
  return out;
}

std::vector<ToySample> load_split(const fs::path& root, const std::string& name,
                                  const SplitInfo& info, const Shape& shape) {
  std::vector<ToySample> out;
  for (std::size_t i = 0; i < info.labels.size(); ++i) {
    const fs::path img = sample_image_path(root, name, i);
    const fs::path msk = sample_mask_path(root, name, i);
    if (!fs::exists(img) || !fs::exists(msk)) {
      throw ManifestMismatchError("dataset " + root.string() + ": manifest lists " +
                                  std::to_string(info.labels.size()) + " " + name +
                                  " samples but " + img.filename().string() +
                                  " or its mask is missing");
    }
    ToySample s;
    s.image = load_clean_image(img);
    if (s.image.shape() != shape) {
      throw ManifestMismatchError(img.string() + ": shape " + s.image.shape().str() +
                                  " differs from manifest " + shape.str());
    }
    const ImageTensor m = load_image(msk);
    if (m.channels() != 1 || m.height() != shape.height || m.width() != shape.width) {
      throw ManifestMismatchError(msk.string() + ": mask shape mismatch");
    }
    s.mask = BinaryMask::from_image(m);
    s.label = info.labels[i];
    if ((s.label == 1) != !s.mask.empty_mask()) {
      throw ManifestMismatchError(img.string() + ": label disagrees with mask");
    }
    out.push_back(std::move(s));
  }
  // Surplus files mean the manifest is stale.
  std::size_t on_disk = 0;
  for (const auto& entry : fs::directory_iterator(root / name)) {
    on_disk += entry.is_regular_file() && entry.path().extension() == ".img";
  }
  if (on_disk != 2 * info.labels.size()) {
    throw ManifestMismatchError("dataset " + root.string() + ": " + std::to_string(on_disk) +
                                " " + name + " files on disk, manifest implies " +
                                std::to_string(2 * info.labels.size()));
  }
  return out;
}

}  // namespace

// --- image files ------------------------------------------------------------

void save_image(const fs::path& path, const ImageTensor& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image " + path.string());
  out.write(kImageMagic, sizeof kImageMagic);
  write_u32(out, kImageFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(image.channels()));
  write_u32(out, static_cast<std::uint32_t>(image.height()));
  write_u32(out, static_cast<std::uint32_t>(image.width()));
  std::vector<float> buf(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) buf[i] = static_cast<float>(image[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw DataError("failed writing image " + path.string());
}

ImageTensor load_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  char magic[4];
  in.read(magic, sizeof magic);
  const std::uint32_t version = read_u32(in);
  const std::uint32_t c = read_u32(in);
  const std::uint32_t h = read_u32(in);
  const std::uint32_t w = read_u32(in);
  if (!in) throw CorruptHeaderError(path.string() + ": truncated header");
  if (std::memcmp(magic, kImageMagic, sizeof magic) != 0) {
    throw CorruptHeaderError(path.string() + ": bad magic");
  }
  if (version != kImageFormatVersion) {
    throw CorruptHeaderError(path.string() + ": unsupported version " +
                             std::to_string(version));
  }
  if (c == 0 || h == 0 || w == 0 || c > 4096 || h > 65536 || w > 65536) {
    throw CorruptHeaderError(path.string() + ": invalid dimensions");
  }
  const std::size_t n = std::size_t{c} * h * w;
  std::vector<float> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != n * sizeof(float)) {
    throw PayloadLengthError(path.string() + ": payload has " + std::to_string(got) +
                             " bytes, expected " + std::to_string(n * sizeof(float)));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw PayloadLengthError(path.string() + ": trailing bytes after payload");
  }
  std::vector<double> data(buf.begin(), buf.end());
  return ImageTensor(Shape{c, h, w}, std::move(data));
}

ImageTensor load_clean_image(const fs::path& path) {
  ImageTensor img = load_image(path);
  for (double v : img.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DataError(path.string() + ": clean image value outside [0, 1]");
    }
  }
  return img;
}

void save_pgm(const fs::path& path, const ImageTensor& image, double lo, double hi) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << image.width() << " " << image.height() << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<unsigned char> bytes(image.shape().plane());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp((image[i] - lo) / span, 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void save_pgm(const fs::path& path, const ImageTensor& image) {
  double hi = 0.0;
  for (double v : image.data()) hi = std::max(hi, v);
  save_pgm(path, image, 0.0, hi);
}

// --- phantom generation -------------------------------------------------------

void PhantomConfig::validate() const {
  if (channels == 0 || height < 8 || width < 8) {
    throw std::invalid_argument("phantom: need channels >= 1 and dims >= 8");
  }
  if (train_healthy < 0 || train_diseased < 0 || test_healthy < 0 || test_diseased < 0 ||
      train_healthy + train_diseased == 0) {
    throw std::invalid_argument("phantom: sample counts must be >= 0, train nonempty");
  }
  if (!(lesion_offset > 0.0 && lesion_offset < 1.0)) {
    throw std::invalid_argument("phantom: lesion_offset must be in (0, 1)");
  }
  if (!(lesion_radius_min > 0.5 && lesion_radius_min <= lesion_radius_max)) {
    throw std::invalid_argument("phantom: need 0.5 < lesion_radius_min <= max");
  }
  if (!(texture_amplitude >= 0.0 && texture_amplitude < 0.2)) {
    throw std::invalid_argument("phantom: texture_amplitude must be in [0, 0.2)");
  }
}

PhantomDraw draw_phantom(const PhantomConfig& cfg, bool diseased, Rng& rng) {
  const double H = static_cast<double>(cfg.height);
  const double W = static_cast<double>(cfg.width);
  const double cx = W / 2.0 - 0.5 + uniform(rng, -0.06, 0.06) * W;
  const double cy = H / 2.0 - 0.5 + uniform(rng, -0.06, 0.06) * H;
  const double ax = uniform(rng, 0.30, 0.40) * W;
  const double ay = uniform(rng, 0.30, 0.40) * H;
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double intensity = uniform(rng, 0.45, 0.6);
  // Two low-frequency plane waves for texture.
  std::array<std::array<double, 3>, 2> waves{};
  for (auto& wv : waves) {
    const double len = uniform(rng, 8.0, 16.0);
    const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    wv = {std::cos(dir) * 2.0 * std::numbers::pi / len,
          std::sin(dir) * 2.0 * std::numbers::pi / len,
          uniform(rng, 0.0, 2.0 * std::numbers::pi)};
  }
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  auto radial = [&](double x, double y) {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = (ca * dx + sa * dy) / ax;
    const double v = (-sa * dx + ca * dy) / ay;
    return std::sqrt(u * u + v * v);
  };

  PhantomDraw draw;
  const Shape shape = cfg.shape();
  draw.base = ImageTensor(shape);
  draw.foreground = BinaryMask(cfg.height, cfg.width);
  const double edge = std::min(ax, ay);
  for (std::size_t y = 0; y < cfg.height; ++y) {
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const double r = radial(static_cast<double>(x), static_cast<double>(y));
      const double weight = std::clamp(0.5 - (r - 1.0) * edge, 0.0, 1.0);
      double texture = 0.0;
      for (const auto& wv : waves) {
        texture += std::sin(wv[0] * x + wv[1] * y + wv[2]);
      }
      texture *= cfg.texture_amplitude / 2.0;
      draw.foreground.set(y * cfg.width + x, weight > 0.5);
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double v = weight * (intensity * kTissueGain[c % 4] + texture);
        draw.base.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  draw.sample.image = draw.base;
  draw.sample.mask = BinaryMask(cfg.height, cfg.width);
  draw.sample.label = diseased ? 1 : 0;
  if (diseased) {
    const double radius = uniform(rng, cfg.lesion_radius_min, cfg.lesion_radius_max);
    const bool square = uniform01(rng) < 0.5;
    const double half = square ? 0.85 * radius : radius;
    // Centre the lesion well inside the ellipse so the mask stays in the
    // foreground: every lesion pixel is within `reach` of the centre.
    const double reach = square ? half * std::numbers::sqrt2 : half;
    const double limit = std::max(0.0, 0.8 - (reach + 1.0) / edge);
    const double rho = limit * std::sqrt(uniform01(rng));
    const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double u = rho * std::cos(phi) * ax;
    const double v = rho * std::sin(phi) * ay;
    const double lx = cx + ca * u - sa * v;
    const double ly = cy + sa * u + ca * v;
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double dx = static_cast<double>(x) - lx;
        const double dy = static_cast<double>(y) - ly;
        const bool inside = square ? std::max(std::abs(dx), std::abs(dy)) <= half
                                   : dx * dx + dy * dy <= half * half;
        if (!inside || !draw.foreground.at(y, x)) continue;
        draw.sample.mask.set(y * cfg.width + x, true);
        for (std::size_t c = 0; c < cfg.channels; ++c) {
          double& p = draw.sample.image.at(c, y, x);
          p = std::clamp(p + cfg.lesion_offset * kLesionGain[c % 4], 0.0, 1.0);
        }
      }
    }
    if (draw.sample.mask.empty_mask()) {
      // Radius >= 0.5 around a pixel centre always covers one pixel; this
      // only triggers for degenerate configurations.
      throw std::logic_error("draw_phantom: lesion covered no pixels");
    }
  }
  // Stored as float32 on disk; round now so in-memory and loaded data agree.
  for (double& v : draw.sample.image.data()) v = static_cast<float>(v);
  for (double& v : draw.base.data()) v = static_cast<float>(v);
  return draw;
}

int SplitInfo::healthy() const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), 0));
}

int SplitInfo::diseased() const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), 1));
}

Dataset generate_toy_dataset(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Dataset ds;
  ds.manifest.seed = seed;
  ds.manifest.generation = cfg;
  ds.train = generate_split(cfg, cfg.train_healthy, cfg.train_diseased, rng);
  ds.test = generate_split(cfg, cfg.test_healthy, cfg.test_diseased, rng);
  ds.manifest.train.labels = labels_of(ds.train);
  ds.manifest.test.labels = labels_of(ds.test);
  return ds;
}

fs::path sample_image_path(const fs::path& root, const std::string& split,
                           std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "%05zu.img", index);
  return root / split / name;
}

fs::path sample_mask_path(const fs::path& root, const std::string& split,
                          std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "%05zu_mask.img", index);
  return root / split / name;
}

void save_dataset(const fs::path& root, const Dataset& dataset) {
  std::error_code ec;
  for (const char* split : {"train", "test"}) {
    fs::create_directories(root / split, ec);
    if (ec) throw DataError("cannot create " + (root / split).string() + ": " + ec.message());
  }
  auto write_split = [&](const std::string& name, const std::vector<ToySample>& samples) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      save_image(sample_image_path(root, name, i), samples[i].image);
      save_image(sample_mask_path(root, name, i), samples[i].mask.to_image());
    }
  };
  write_split("train", dataset.train);
  write_split("test", dataset.test);

  const auto& m = dataset.manifest;
  const json j = {{"format_version", m.format_version},
                  {"seed", m.seed},
                  {"healthy_index", m.healthy_index},
                  {"channels", m.generation.channels},
                  {"height", m.generation.height},
                  {"width", m.generation.width},
                  {"generation", phantom_to_json(m.generation)},
                  {"splits", {{"train", split_to_json(m.train)},
                              {"test", split_to_json(m.test)}}}};
  std::ofstream out(root / kManifestName, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + root.string());
  out << j.dump(2) << "\n";
}

Dataset generate_toy_dataset(const PhantomConfig& cfg, std::uint64_t seed,
                             const fs::path& root) {
  Dataset ds = generate_toy_dataset(cfg, seed);
  save_dataset(root, ds);
  return ds;
}

Dataset load_dataset(const fs::path& root) {
  std::ifstream in(root / kManifestName);
  if (!in) throw DataError("no manifest.json in " + root.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptHeaderError(root.string() + "/manifest.json: " + e.what());
  }
  Dataset ds;
  auto& m = ds.manifest;
  try {
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.healthy_index = j.at("healthy_index").get<int>();
    m.generation = phantom_from_json(j.at("generation"));
    const Shape declared{j.at("channels").get<std::size_t>(),
                         j.at("height").get<std::size_t>(),
                         j.at("width").get<std::size_t>()};
    if (declared != m.generation.shape()) {
      throw ManifestMismatchError("manifest: image dims disagree with generation block");
    }
    for (auto [name, info] : {std::pair{"train", &m.train}, std::pair{"test", &m.test}}) {
      const json& s = j.at("splits").at(name);
      info->labels = s.at("labels").get<std::vector<int>>();
      if (s.at("healthy").get<int>() != info->healthy() ||
          s.at("diseased").get<int>() != info->diseased() ||
          info->healthy() + info->diseased() != static_cast<int>(info->labels.size())) {
        throw ManifestMismatchError(std::string("manifest: ") + name +
                                    " counts disagree with its label list");
      }
    }
  } catch (const json::exception& e) {
    throw CorruptHeaderError(root.string() + "/manifest.json: " + e.what());
  }
  if (m.format_version != 1) {
    throw CorruptHeaderError("manifest: unsupported format_version");
  }
  if (m.healthy_index != 0) {
    throw ManifestMismatchError("manifest: healthy_index must be 0");
  }
  const Shape shape = m.generation.shape();
  ds.train = load_split(root, "train", m.train, shape);
  ds.test = load_split(root, "test", m.test, shape);
  return ds;
}

std::vector<ImageTensor> images_of(const std::vector<ToySample>& samples) {
  std::vector<ImageTensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

std::vector<int> labels_of(const std::vector<ToySample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

}  // namespace diffano
