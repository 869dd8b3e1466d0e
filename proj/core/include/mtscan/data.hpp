#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtscan/random.hpp"
#include "mtscan/tensor.hpp"

namespace mtscan {

inline constexpr std::uint16_t kIgnoreLabel = 65535;

/// One synthetic scene with every task label. Invalid pixels carry
/// kIgnoreLabel (class maps), depth 0 or a zero normal.
struct SceneSample {
  std::size_t height = 0, width = 0;
  Tensor image;                        // 3 x H x W in [0, 1]
  std::vector<std::uint16_t> semseg;   // H x W
  std::vector<double> depth;           // H x W
  std::vector<double> normals;         // 3 x H x W
  std::vector<std::uint16_t> boundary; // H x W, {0, 1}
};

struct SceneOptions {
  std::size_t height = 64, width = 64;
  std::size_t objects = 4;
  std::size_t classes = 5;  // class 0 is the ground plane
};

/// Ground plane plus slanted rectangles and ellipsoid caps, z-buffered.
/// Depth and normals come from the same analytic surface; the boundary map is
/// the 4-neighbourhood label-change mask. Pure function of the seed.
SceneSample generate_scene(std::uint64_t seed, const SceneOptions& options);
SceneSample generate_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t objects);

/// 1 wherever a 4-neighbour carries a different label.
std::vector<std::uint16_t> boundary_from_labels(const std::vector<std::uint16_t>& labels, std::size_t height,
                                                std::size_t width);

/// Mirrors every modality left-right; the normals' x-component flips sign.
SceneSample flip_horizontal(const SceneSample& s);
/// Pad-and-crop translation by (dy, dx); uncovered pixels become invalid.
SceneSample translate(const SceneSample& s, long dy, long dx);

struct AugmentOptions {
  bool enabled = true;
  bool flip = true;
  std::size_t max_shift = 4;
};

SceneSample augment(const SceneSample& s, const AugmentOptions& options, Rng& rng);

enum class TensorDType : std::uint8_t { f64 = 1, u16 = 2 };

struct TensorFileData {
  TensorDType dtype = TensorDType::f64;
  Shape shape;
  std::vector<double> f64;
  std::vector<std::uint16_t> u16;
};

/// "MTSN1" container: magic, dtype tag, u32 rank, u32 extents, payload; all
/// little-endian.
void write_tensor_file(const std::filesystem::path& path, const TensorFileData& data);
TensorFileData read_tensor_file(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);
/// float64 payloads only.
Tensor read_tensor(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const Shape& shape, const std::vector<std::uint16_t>& labels);

/// Writes stem_{image,semseg,depth,normals,boundary}.mtsn under dir.
struct SamplePaths {
  std::filesystem::path image, semseg, depth, normals, boundary;
};
SamplePaths save_sample(const std::filesystem::path& dir, const std::string& stem, const SceneSample& s);
SceneSample load_sample(const SamplePaths& paths);

struct GeneratorSpec {
  std::uint64_t seed = 0;
  std::size_t count = 256;
  SceneOptions scene;
};

/// A JSON manifest names either a generator ({"generator": {...}}) or sample
/// files ({"samples": [{"image": ..., ...}]}, relative to the manifest).
struct Manifest {
  std::optional<GeneratorSpec> generator;
  std::vector<SamplePaths> samples;

  static Manifest parse(const std::string& text, const std::filesystem::path& base);
  static Manifest load(const std::filesystem::path& path);
  std::string to_json() const;
};

class Dataset {
 public:
  static Dataset generated(const GeneratorSpec& spec);
  /// Throws DataError when a listed file is missing.
  static Dataset from_manifest(const Manifest& manifest);

  std::size_t size() const { return samples_.size(); }
  const SceneSample& at(std::size_t i) const { return samples_.at(i); }
  std::size_t classes() const { return classes_; }

 private:
  std::vector<SceneSample> samples_;
  std::size_t classes_ = 0;
};

/// Endless stream of batches, reshuffled every epoch from the seed.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch, std::uint64_t seed, AugmentOptions augment);
  std::vector<SceneSample> next();
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const Dataset* data_;
  std::size_t batch_;
  std::uint64_t seed_;
  AugmentOptions augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0, epoch_ = 0;
  Rng aug_rng_;
};

}  // namespace mtscan
