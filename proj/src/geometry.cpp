#include "cscon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cscon {

PointCloud normalize_cloud(const PointCloud& cloud) {
  if (cloud.size() < 1) throw InvalidArgument("normalize_cloud: empty cloud");
  for (const auto& p : cloud.points)
    for (float c : p)
      if (!std::isfinite(c)) throw InvalidArgument("normalize_cloud: non-finite coordinate");

  double cx = 0.0, cy = 0.0, cz = 0.0;
  for (const auto& p : cloud.points) {
    cx += p[0];
    cy += p[1];
    cz += p[2];
  }
  const double n = static_cast<double>(cloud.size());
  cx /= n;
  cy /= n;
  cz /= n;

  double max_norm2 = 0.0;
  for (const auto& p : cloud.points) {
    const double dx = p[0] - cx, dy = p[1] - cy, dz = p[2] - cz;
    max_norm2 = std::max(max_norm2, dx * dx + dy * dy + dz * dz);
  }

  PointCloud out;
  out.label = cloud.label;
  out.points.reserve(cloud.points.size());
  if (max_norm2 == 0.0) {
    out.degenerate = true;
    out.points.assign(cloud.points.size(), Point3{0.0f, 0.0f, 0.0f});
    return out;
  }
  const double inv = 1.0 / std::sqrt(max_norm2);
  for (const auto& p : cloud.points) {
    out.points.push_back({static_cast<float>((p[0] - cx) * inv),
                          static_cast<float>((p[1] - cy) * inv),
                          static_cast<float>((p[2] - cz) * inv)});
  }
  return out;
}

std::pair<std::vector<Point3>, std::vector<std::int64_t>> fps(const PointCloud& cloud,
                                                              std::int64_t n_centers,
                                                              std::int64_t start) {
  const std::int64_t p = cloud.size();
  if (n_centers < 1 || n_centers > p)
    throw InvalidArgument("fps: n_centers " + std::to_string(n_centers) +
                          " out of range for cloud of " + std::to_string(p));
  if (start < 0 || start >= p)
    throw InvalidArgument("fps: start " + std::to_string(start) + " out of range");

  std::vector<double> min_dist(static_cast<std::size_t>(p),
                               std::numeric_limits<double>::infinity());
  std::vector<char> selected(static_cast<std::size_t>(p), 0);
  std::vector<std::int64_t> indices;
  indices.reserve(static_cast<std::size_t>(n_centers));

  std::int64_t current = start;
  for (std::int64_t s = 0; s < n_centers; ++s) {
    indices.push_back(current);
    selected[static_cast<std::size_t>(current)] = 1;
    const Point3& c = cloud.points[static_cast<std::size_t>(current)];
    double best = -1.0;
    std::int64_t best_idx = -1;
    for (std::int64_t i = 0; i < p; ++i) {
      const double d2 = squared_distance(cloud.points[static_cast<std::size_t>(i)], c);
      if (d2 < min_dist[static_cast<std::size_t>(i)]) min_dist[static_cast<std::size_t>(i)] = d2;
      if (!selected[static_cast<std::size_t>(i)] &&
          min_dist[static_cast<std::size_t>(i)] > best) {
        best = min_dist[static_cast<std::size_t>(i)];
        best_idx = i;
      }
    }
    current = best_idx;
  }

  std::vector<Point3> centers;
  centers.reserve(indices.size());
  for (auto i : indices) centers.push_back(cloud.points[static_cast<std::size_t>(i)]);
  return {std::move(centers), std::move(indices)};
}

std::vector<Point3> knn(const PointCloud& cloud, const std::vector<Point3>& centers,
                        std::int64_t k) {
  const std::int64_t p = cloud.size();
  if (k < 1 || k > p)
    throw InvalidArgument("knn: k " + std::to_string(k) + " out of range for cloud of " +
                          std::to_string(p));
  std::vector<Point3> out;
  out.reserve(centers.size() * static_cast<std::size_t>(k));
  std::vector<std::pair<double, std::int64_t>> dist(static_cast<std::size_t>(p));
  for (const auto& c : centers) {
    for (std::int64_t i = 0; i < p; ++i)
      dist[static_cast<std::size_t>(i)] = {
          squared_distance(cloud.points[static_cast<std::size_t>(i)], c), i};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (std::int64_t i = 0; i < k; ++i)
      out.push_back(cloud.points[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)].second)]);
  }
  return out;
}

PatchSet normalize_patches(const std::vector<Point3>& patches_absolute,
                           const std::vector<Point3>& centers,
                           const std::vector<std::int64_t>& center_indices, std::int64_t k) {
  if (centers.size() != center_indices.size() ||
      patches_absolute.size() != centers.size() * static_cast<std::size_t>(k))
    throw InvalidArgument("normalize_patches: " + std::to_string(patches_absolute.size()) +
                          " patch points do not match " + std::to_string(centers.size()) +
                          " centers x k=" + std::to_string(k));
  PatchSet ps;
  ps.centers = centers;
  ps.center_indices = center_indices;
  ps.n_patches = static_cast<std::int64_t>(centers.size());
  ps.patch_size = k;
  ps.patches.reserve(patches_absolute.size());
  for (std::int64_t i = 0; i < ps.n_patches; ++i) {
    const Point3& c = centers[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < k; ++j) {
      const Point3& q = patches_absolute[static_cast<std::size_t>(i * k + j)];
      ps.patches.push_back({static_cast<double>(q[0]) - c[0],
                            static_cast<double>(q[1]) - c[1],
                            static_cast<double>(q[2]) - c[2]});
    }
  }
  return ps;
}

PatchSet patchify(const PointCloud& cloud, std::int64_t n_patches, std::int64_t patch_size,
                  std::int64_t start) {
  auto [centers, indices] = fps(cloud, n_patches, start);
  auto absolute = knn(cloud, centers, patch_size);
  return normalize_patches(absolute, centers, indices, patch_size);
}

}  // namespace cscon
