#pragma once

// Procedural shape dataset ("ShapesMini"), the augmentation menu, and the
// on-disk record/manifest formats.
//
// Record file (little-endian): magic "CSPC", u32 point count, i32 label,
// then count x 3 float32 coordinates.
// Manifest: one line per record, tab-separated: split, class-id, relative
// path. Records live relative to the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/geometry.hpp"

namespace cscon {

enum class ShapeClass : int {
  sphere = 0,
  cube = 1,
  cylinder = 2,
  cone = 3,
  torus = 4,
  pyramid = 5,
  plane = 6,
  helix = 7,
};

inline constexpr int kNumShapeClasses = 8;

const char* shape_class_name(ShapeClass c);
ShapeClass shape_class_from_id(int id);

struct ShapeGenConfig {
  double noise = 0.01;  // surface noise level; generators keep any axis-aligned
                        // structure (e.g. the plane's thickness) within it
};

// Deterministic in (cls, n_points, seed); output is normalized and labeled.
PointCloud generate_shape(ShapeClass cls, std::int64_t n_points, std::uint64_t seed,
                          const ShapeGenConfig& cfg = {});

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

enum class AugmentPolicy : int {
  none = 0,
  jitter = 1,
  scale = 2,
  rotation = 3,
  scale_translate = 4,
  scale_translate_rotation = 5,
  rotation_scale_translate = 6,
};

const char* augment_policy_name(AugmentPolicy p);
AugmentPolicy augment_policy_from_name(const std::string& name);

struct AugmentParams {
  double scale_lo = 2.0 / 3.0;
  double scale_hi = 3.0 / 2.0;
  double translate_max = 0.2;   // per axis, uniform in [-max, max]
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
};

// Applies the policy with parameters drawn from rng; label and point count
// are preserved.
PointCloud augment(const PointCloud& cloud, AugmentPolicy policy, Rng& rng,
                   const AugmentParams& params = {});

PointCloud apply_rotation(const PointCloud& cloud, const std::array<std::array<double, 3>, 3>& r);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::int64_t train_per_class = 250;  // 8 classes -> 2000 train / 400 test
  std::int64_t test_per_class = 50;
  std::int64_t n_points = 1024;
  std::uint64_t seed = 7;
  double noise = 0.01;
};

struct ManifestEntry {
  std::string split;
  int class_id = -1;
  std::string relpath;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding the manifest
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::int64_t count(const std::string& split) const;
};

inline constexpr const char* kManifestFilename = "manifest.tsv";

void save_record(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_record(const std::filesystem::path& path);

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
std::vector<PointCloud> load_dataset(const DatasetManifest& manifest, const std::string& split);

}  // namespace cscon
