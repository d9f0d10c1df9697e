#pragma once

// Deterministic point-cloud preprocessing: global normalization, farthest
// point sampling, k-nearest-neighbor grouping and per-patch centering.
// Distances are squared Euclidean accumulated in double; ties break toward
// the lower point index so results are exactly reproducible.

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "cscon/common.hpp"

namespace cscon {

using Point3 = std::array<float, 3>;
using DPoint3 = std::array<double, 3>;

struct PointCloud {
  std::vector<Point3> points;
  int label = -1;
  // Set by normalize_cloud when every input point was identical (the scale
  // step is skipped and the output collapses to the origin).
  bool degenerate = false;

  std::int64_t size() const { return static_cast<std::int64_t>(points.size()); }
};

struct PatchSet {
  std::vector<Point3> centers;              // n_patches
  std::vector<std::int64_t> center_indices; // n_patches, distinct
  // Center-relative coordinates, kept in double so that adding the center
  // back reproduces the absolute float coordinates bit-exactly.
  std::vector<DPoint3> patches;             // n_patches * patch_size
  std::int64_t n_patches = 0;
  std::int64_t patch_size = 0;

  const DPoint3* patch(std::int64_t i) const { return patches.data() + i * patch_size; }
};

// Centroid to the origin, then scale so the farthest point sits at norm 1.
PointCloud normalize_cloud(const PointCloud& cloud);

// Greedy farthest-first selection of n_centers indices, starting at `start`.
std::pair<std::vector<Point3>, std::vector<std::int64_t>> fps(const PointCloud& cloud,
                                                              std::int64_t n_centers,
                                                              std::int64_t start = 0);

// For each center, the k cloud points closest to it (absolute coordinates),
// ordered by ascending distance then ascending index. Duplicate cloud points
// may appear in a patch; the center itself is included when it is a member
// of the cloud.
std::vector<Point3> knn(const PointCloud& cloud, const std::vector<Point3>& centers,
                        std::int64_t k);

// Subtract each patch's center from its points.
PatchSet normalize_patches(const std::vector<Point3>& patches_absolute,
                           const std::vector<Point3>& centers,
                           const std::vector<std::int64_t>& center_indices, std::int64_t k);

// fps + knn + normalize_patches.
PatchSet patchify(const PointCloud& cloud, std::int64_t n_patches, std::int64_t patch_size,
                  std::int64_t start = 0);

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = static_cast<double>(a[0]) - static_cast<double>(b[0]);
  const double dy = static_cast<double>(a[1]) - static_cast<double>(b[1]);
  const double dz = static_cast<double>(a[2]) - static_cast<double>(b[2]);
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace cscon
