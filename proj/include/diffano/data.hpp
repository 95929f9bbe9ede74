#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffano/image.hpp"
#include "diffano/metrics.hpp"
#include "diffano/random.hpp"

namespace diffano {

// --- errors ---------------------------------------------------------------

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// Bad magic, unknown version or malformed dimensions.
class CorruptHeaderError : public DataError {
 public:
  using DataError::DataError;
};
/// Payload shorter or longer than C*H*W floats.
class PayloadLengthError : public DataError {
 public:
  using DataError::DataError;
};
/// Manifest disagrees with the files on disk.
class ManifestMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// --- image files ------------------------------------------------------------
//
// Layout: "DAIM", u32 version, u32 C, u32 H, u32 W, then C*H*W float32
// values, channel-major. Everything little-endian.

inline constexpr std::uint32_t kImageFormatVersion = 1;

void save_image(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor load_image(const std::filesystem::path& path);

/// load_image plus a [0, 1] range check for clean inputs.
ImageTensor load_clean_image(const std::filesystem::path& path);

/// 8-bit binary graymap of channel 0, linearly mapped from [lo, hi].
void save_pgm(const std::filesystem::path& path, const ImageTensor& image,
              double lo, double hi);
/// Same, scaled from 0 to the image maximum.
void save_pgm(const std::filesystem::path& path, const ImageTensor& image);

// --- phantom generation -------------------------------------------------------

struct PhantomConfig {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  int train_healthy = 500;
  int train_diseased = 500;
  int test_healthy = 50;
  int test_diseased = 50;
  double lesion_offset = 0.35;
  double lesion_radius_min = 2.5;
  double lesion_radius_max = 4.0;
  double texture_amplitude = 0.04;

  Shape shape() const { return {channels, height, width}; }
  void validate() const;
};

struct ToySample {
  ImageTensor image;
  int label = 0;  // 0 healthy, 1 diseased
  BinaryMask mask;
};

struct PhantomDraw {
  ToySample sample;
  ImageTensor base;         // the phantom before any lesion is added
  BinaryMask foreground;    // pixels inside the anatomy
};

/// One phantom: smooth textured ellipse, plus a bright disc or square lesion
/// with its exact mask when `diseased`.
PhantomDraw draw_phantom(const PhantomConfig& cfg, bool diseased, Rng& rng);

struct SplitInfo {
  std::vector<int> labels;  // per sample, index order
  int healthy() const;
  int diseased() const;
};

struct DatasetManifest {
  std::uint32_t format_version = 1;
  std::uint64_t seed = 0;
  int healthy_index = 0;
  PhantomConfig generation;
  SplitInfo train;
  SplitInfo test;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ToySample> train;
  std::vector<ToySample> test;
};

/// In-memory generation; deterministic in (cfg, seed).
Dataset generate_toy_dataset(const PhantomConfig& cfg, std::uint64_t seed);

/// Writes `<root>/manifest.json` and `<root>/{train,test}/NNNNN{.img,_mask.img}`.
void save_dataset(const std::filesystem::path& root, const Dataset& dataset);

/// Generates and saves. Throws DataError if the directory is unwritable.
Dataset generate_toy_dataset(const PhantomConfig& cfg, std::uint64_t seed,
                             const std::filesystem::path& root);

Dataset load_dataset(const std::filesystem::path& root);

std::filesystem::path sample_image_path(const std::filesystem::path& root,
                                        const std::string& split, std::size_t index);
std::filesystem::path sample_mask_path(const std::filesystem::path& root,
                                       const std::string& split, std::size_t index);

std::vector<ImageTensor> images_of(const std::vector<ToySample>& samples);
std::vector<int> labels_of(const std::vector<ToySample>& samples);

}  // namespace diffano
