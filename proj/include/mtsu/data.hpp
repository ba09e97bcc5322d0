#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtsu/params.hpp"
#include "mtsu/tensor.hpp"

namespace mtsu {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scene samples
// ---------------------------------------------------------------------------

struct SceneSample {
  Tensor<float> rgb;                      // 3 x H x W, values in [0,1]
  Tensor<float> depth;                    // 1 x H x W, values in [0,1]
  std::vector<int> semantic;              // H*W class ids, row-major
  std::vector<int> instance;              // H*W ids, 0 = stuff
  std::map<int, double> orientations;     // instance id -> degrees [0,360)
  int scene_class = 0;
  int64_t h = 0, w = 0;
};

struct GenConfig {
  int64_t h = 64, w = 64;
  int stuff_classes = 2;   // ids 0..stuff-1
  int thing_classes = 4;   // ids stuff..stuff+thing-1
  int scene_classes = 4;
  int min_objects = 1;
  int max_objects = 4;
  bool sensor_noise = false;
  double min_centroid_dist = 12.0;  // px; keeps center grouping unambiguous
};

/// Deterministic toy scene: layered stuff background colored by scene class,
/// rotated rectangles/ellipses as things, synthetic depth. Throws
/// std::invalid_argument when the requested object count cannot be placed
/// under the area and spacing constraints.
SceneSample generate_scene(uint64_t seed, const GenConfig& cfg);

/// Checks all SceneSample invariants; throws std::invalid_argument naming
/// `what` on violation.
void validate_sample(const SceneSample& s, int num_semantic_classes,
                     int num_scene_classes, int stuff_classes,
                     const std::string& what);

// ---------------------------------------------------------------------------
// Tensor files ("MTAT": magic, version u32, dtype u32 (0 = f32), rank u32,
// extents u64 each, payload row-major; all little-endian)
// ---------------------------------------------------------------------------

void write_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct DatasetManifest {
  int64_t count = 0;
  std::vector<std::string> semantic_names;
  std::vector<std::string> scene_names;
  int stuff_classes = 0;  // semantic ids [0, stuff) are stuff, rest things
  std::vector<std::string> sample_dirs;  // relative to the manifest directory
};

void write_dataset(const std::filesystem::path& dir,
                   const std::vector<SceneSample>& samples,
                   const DatasetManifest& meta);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<SceneSample> load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Checkpoints: sequence of (name length u32 LE, name bytes, tensor)
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore<float>& store);
void load_checkpoint(const std::filesystem::path& path,
                     ParamStore<float>& store);

/// Writes via a temporary file in the same directory, then renames, so a
/// crash never leaves a partial file at `path`.
void atomic_write_text(const std::filesystem::path& path,
                       const std::string& text);

}  // namespace mtsu
