#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cscon/synthdata.hpp"

using namespace cscon;
namespace fs = std::filesystem;

namespace {

double norm_of(const Point3& p) {
  return std::sqrt(static_cast<double>(p[0]) * p[0] + static_cast<double>(p[1]) * p[1] +
                   static_cast<double>(p[2]) * p[2]);
}

std::vector<double> pairwise_distances(const PointCloud& c, std::size_t limit = 40) {
  std::vector<double> d;
  const std::size_t n = std::min(limit, c.points.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      d.push_back(std::sqrt(squared_distance(c.points[i], c.points[j])));
  return d;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cscon_synth_" + std::to_string(Rng(std::random_device{}()).next_u64() % 1000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generate_shape is deterministic in (class, n, seed)") {
  for (int cls = 0; cls < kNumShapeClasses; ++cls) {
    auto a = generate_shape(shape_class_from_id(cls), 96, 1234);
    auto b = generate_shape(shape_class_from_id(cls), 96, 1234);
    CHECK(a.points == b.points);
    CHECK(a.label == cls);
    auto c = generate_shape(shape_class_from_id(cls), 96, 1235);
    CHECK(a.points != c.points);
  }
}

TEST_CASE("sphere samples sit at norm 1 within the noise level") {
  ShapeGenConfig cfg;
  cfg.noise = 0.01;
  auto cloud = generate_shape(ShapeClass::sphere, 512, 77, cfg);
  for (const auto& p : cloud.points) CHECK(std::abs(norm_of(p) - 1.0) <= cfg.noise + 1e-6);
}

TEST_CASE("plane samples stay within the noise level of z = 0") {
  ShapeGenConfig cfg;
  cfg.noise = 0.01;
  auto cloud = generate_shape(ShapeClass::plane, 512, 78, cfg);
  for (const auto& p : cloud.points) CHECK(std::abs(p[2]) <= cfg.noise);
}

TEST_CASE("generate_shape rejects tiny point counts and bad ids") {
  CHECK_THROWS_AS(generate_shape(ShapeClass::cube, 15, 1), InvalidArgument);
  CHECK_THROWS_AS(shape_class_from_id(8), InvalidArgument);
  CHECK_THROWS_AS(shape_class_from_id(-1), InvalidArgument);
}

TEST_CASE("augment policies preserve point count and label") {
  auto cloud = generate_shape(ShapeClass::torus, 128, 5);
  for (int i = 0; i <= static_cast<int>(AugmentPolicy::rotation_scale_translate); ++i) {
    Rng rng(900 + i);
    auto out = augment(cloud, static_cast<AugmentPolicy>(i), rng);
    CHECK(out.size() == cloud.size());
    CHECK(out.label == cloud.label);
  }
}

TEST_CASE("augment none is the identity") {
  auto cloud = generate_shape(ShapeClass::helix, 64, 6);
  Rng rng(1);
  auto out = augment(cloud, AugmentPolicy::none, rng);
  CHECK(out.points == cloud.points);
}

TEST_CASE("rotation preserves pairwise distances within 1e-5") {
  auto cloud = generate_shape(ShapeClass::cone, 64, 7);
  Rng rng(2);
  auto out = augment(cloud, AugmentPolicy::rotation, rng);
  auto da = pairwise_distances(cloud);
  auto db = pairwise_distances(out);
  for (std::size_t i = 0; i < da.size(); ++i) CHECK(std::abs(da[i] - db[i]) < 1e-5);
}

TEST_CASE("scale multiplies every coordinate by the drawn factor exactly") {
  auto cloud = generate_shape(ShapeClass::cube, 64, 8);
  Rng rng(42);
  auto out = augment(cloud, AugmentPolicy::scale, rng);
  Rng replay(42);
  const AugmentParams ap;
  const double s = replay.uniform(ap.scale_lo, ap.scale_hi);
  for (std::int64_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(out.points[i][d] == static_cast<float>(cloud.points[i][d] * s));
}

TEST_CASE("jitter perturbs each coordinate by at most the clip bound") {
  auto cloud = generate_shape(ShapeClass::pyramid, 256, 9);
  Rng rng(3);
  AugmentParams ap;
  auto out = augment(cloud, AugmentPolicy::jitter, rng, ap);
  for (std::int64_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(std::abs(static_cast<double>(out.points[i][d]) - cloud.points[i][d]) <=
            ap.jitter_clip + 1e-6);
}

TEST_CASE("augment policy names round-trip") {
  for (int i = 0; i <= static_cast<int>(AugmentPolicy::rotation_scale_translate); ++i) {
    const auto p = static_cast<AugmentPolicy>(i);
    CHECK(augment_policy_from_name(augment_policy_name(p)) == p);
  }
  CHECK_THROWS_AS(augment_policy_from_name("sheared"), InvalidArgument);
}

TEST_CASE("record save/load round-trips bit-exactly") {
  TempDir dir;
  auto cloud = generate_shape(ShapeClass::cylinder, 200, 11);
  const auto path = dir.path / "sample.cspc";
  save_record(cloud, path);
  auto loaded = load_record(path);
  CHECK(loaded.points == cloud.points);
  CHECK(loaded.label == cloud.label);
}

TEST_CASE("corrupt records report format errors with path and offset") {
  TempDir dir;
  auto cloud = generate_shape(ShapeClass::cylinder, 64, 12);
  const auto path = dir.path / "bad.cspc";

  SUBCASE("bad magic") {
    save_record(cloud, path);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
    f.close();
    try {
      load_record(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
      CHECK(std::string(e.what()).find(path.string()) != std::string::npos);
    }
  }
  SUBCASE("truncated payload") {
    save_record(cloud, path);
    fs::resize_file(path, fs::file_size(path) - 10);
    try {
      load_record(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() > 0);
    }
  }
}

TEST_CASE("build_dataset writes the manifest and loaders round-trip") {
  TempDir dir;
  DatasetConfig cfg;
  cfg.train_per_class = 3;
  cfg.test_per_class = 2;
  cfg.n_points = 64;
  cfg.seed = 99;
  auto manifest = build_dataset(cfg, dir.path);
  CHECK(manifest.count("train") == 3 * kNumShapeClasses);
  CHECK(manifest.count("test") == 2 * kNumShapeClasses);

  auto reloaded = load_manifest(dir.path / kManifestFilename);
  CHECK(reloaded.entries.size() == manifest.entries.size());

  auto train = load_dataset(reloaded, "train");
  CHECK(train.size() == static_cast<std::size_t>(3 * kNumShapeClasses));
  // regeneration is pure in (config, seed): records equal fresh generation
  auto again_dir = TempDir();
  auto manifest2 = build_dataset(cfg, again_dir.path);
  auto train2 = load_dataset(manifest2, "train");
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].points == train2[i].points);
    CHECK(train[i].label == train2[i].label);
  }
}

TEST_CASE("default desk dataset counts are 2000 train / 400 test") {
  DatasetConfig cfg;
  CHECK(cfg.train_per_class * kNumShapeClasses == 2000);
  CHECK(cfg.test_per_class * kNumShapeClasses == 400);
  CHECK(cfg.n_points == 1024);
}

TEST_CASE("manifest referencing a missing file is a format error") {
  TempDir dir;
  std::ofstream mf(dir.path / kManifestFilename);
  mf << "train\t0\trecords/ghost.cspc\n";
  mf.close();
  CHECK_THROWS_AS(load_manifest(dir.path / kManifestFilename), FormatError);
}

TEST_CASE("malformed manifest lines are format errors") {
  TempDir dir;
  std::ofstream mf(dir.path / kManifestFilename);
  mf << "train only_two_fields\n";
  mf.close();
  CHECK_THROWS_AS(load_manifest(dir.path / kManifestFilename), FormatError);
}

TEST_CASE("per-sample record labels must match the manifest") {
  TempDir dir;
  DatasetConfig cfg;
  cfg.train_per_class = 1;
  cfg.test_per_class = 1;
  cfg.n_points = 32;
  build_dataset(cfg, dir.path);
  // overwrite one record with a wrong label
  auto cloud = generate_shape(ShapeClass::sphere, 32, 1);
  cloud.label = 7;
  save_record(cloud, dir.path / "records/train_c0_0.cspc");
  auto manifest = load_manifest(dir.path / kManifestFilename);
  CHECK_THROWS_AS(load_dataset(manifest, "train"), FormatError);
}
