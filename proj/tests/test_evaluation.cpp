#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cscon/evaluation.hpp"
#include "cscon/synthdata.hpp"

using namespace cscon;
namespace fs = std::filesystem;

namespace {

FeatureSet one_hot_features(int per_class, int classes, int dim) {
  FeatureSet fs;
  fs.dim = dim;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      std::vector<float> f(dim, 0.0f);
      f[c % dim] = 1.0f;
      fs.features.push_back(f);
      fs.labels.push_back(c);
    }
  return fs;
}

Model tiny_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.depth = 1;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.n_patches = 8;
  cfg.patch_size = 4;
  cfg.mask_ratio = 0.5;
  cfg.drop_path = 0.0;
  cfg.projector_hidden = 16;
  return Model(cfg, SharingMode::shared, seed);
}

std::vector<PointCloud> tiny_clouds(int per_class, std::int64_t n_points,
                                    std::uint64_t seed = 42) {
  std::vector<PointCloud> out;
  for (int c = 0; c < kNumShapeClasses; ++c)
    for (int i = 0; i < per_class; ++i)
      out.push_back(generate_shape(shape_class_from_id(c), n_points,
                                   mix64(seed, c, static_cast<std::uint64_t>(i))));
  return out;
}

ProbeOptions quick_probe(int seeds = 1) {
  ProbeOptions opt;
  opt.epochs = 40;
  opt.n_seeds = seeds;
  return opt;
}

}  // namespace

TEST_CASE("one-hot class indicator features reach accuracy 1.0") {
  auto train = one_hot_features(12, 8, 16);
  auto test = one_hot_features(4, 8, 16);
  auto r = probe_linear(train, test, quick_probe(2));
  CHECK(r.mean == doctest::Approx(1.0));
  CHECK(r.stddev == doctest::Approx(0.0));
}

TEST_CASE("all-zero features land at the majority-class rate") {
  FeatureSet train = one_hot_features(12, 8, 16);
  for (auto& f : train.features) std::fill(f.begin(), f.end(), 0.0f);
  FeatureSet test = one_hot_features(4, 8, 16);
  for (auto& f : test.features) std::fill(f.begin(), f.end(), 0.0f);
  auto r = probe_linear(train, test, quick_probe());
  CHECK(r.mean >= 0.05);
  CHECK(r.mean <= 0.20);  // balanced 8-class test: majority rate is 0.125
}

TEST_CASE("shuffled labels land near chance") {
  Rng rng(55);
  FeatureSet train, test;
  train.dim = test.dim = 12;
  for (int i = 0; i < 480; ++i) {
    std::vector<float> f(12);
    for (auto& v : f) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    (i < 320 ? train : test).features.push_back(f);
    (i < 320 ? train : test).labels.push_back(static_cast<int>(rng.uniform_int(8)));
  }
  auto r = probe_linear(train, test, quick_probe(3));
  CHECK(r.mean >= 0.125 - 0.08);
  CHECK(r.mean <= 0.125 + 0.08);
}

TEST_CASE("extract_features is deterministic and sized 2*dim") {
  auto model = tiny_model(3);
  auto clouds = tiny_clouds(1, 64);
  auto a = extract_features(model, clouds);
  auto b = extract_features(model, clouds);
  CHECK(a.dim == 32);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  auto single = extract_global(model, clouds[0]);
  CHECK(single == a.features[0]);
}

TEST_CASE("probes never touch backbone parameters") {
  auto model = tiny_model(4);
  auto clouds = tiny_clouds(2, 64);
  auto features = extract_features(model, clouds);
  std::vector<float> before;
  for (const auto& e : model.params().entries())
    before.insert(before.end(), e.tensor.values().begin(), e.tensor.values().end());
  probe_linear(features, features, quick_probe());
  probe_mlp3(features, features, quick_probe());
  std::vector<float> after;
  for (const auto& e : model.params().entries())
    after.insert(after.end(), e.tensor.values().begin(), e.tensor.values().end());
  CHECK(before == after);
}

TEST_CASE("finetune_full runs and reports a sane accuracy") {
  auto model = tiny_model(5);
  auto clouds = tiny_clouds(4, 64);
  FinetuneOptions opt;
  opt.epochs = 80;
  opt.batch_size = 8;
  opt.lr = 2e-3;
  const double acc = finetune_full(model, clouds, clouds, opt);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(acc > 0.2);  // learns its own training set beyond chance
}

TEST_CASE("episodes keep support and query disjoint") {
  auto model = tiny_model(6);
  auto clouds = tiny_clouds(8, 64);
  auto features = extract_features(model, clouds);
  Rng rng(9);
  auto ep = sample_episode(features, 4, 3, 4, rng);
  CHECK(ep.classes.size() == 4);
  std::set<int> classes(ep.classes.begin(), ep.classes.end());
  CHECK(classes.size() == 4);
  std::set<std::int64_t> support(ep.support_rows.begin(), ep.support_rows.end());
  CHECK(support.size() == ep.support_rows.size());
  for (auto q : ep.query_rows) CHECK(support.count(q) == 0);
  CHECK(ep.support_rows.size() == 12);
  CHECK(ep.query_rows.size() == 16);
  CHECK_THROWS_AS(sample_episode(features, 9, 3, 4, rng), InvalidArgument);
  CHECK_THROWS_AS(sample_episode(features, 4, 5, 4, rng), InvalidArgument);
}

TEST_CASE("one-way episodes are always perfectly classified") {
  auto model = tiny_model(7);
  auto clouds = tiny_clouds(6, 64);
  auto r = fewshot(model, clouds, /*way=*/1, /*shot=*/2, /*trials=*/3, /*query=*/3,
                   quick_probe());
  CHECK(r.mean == doctest::Approx(1.0));
}

TEST_CASE("fewshot is reproducible under a fixed master seed") {
  auto model = tiny_model(8);
  auto clouds = tiny_clouds(8, 64);
  auto opt = quick_probe();
  opt.seed = 1001;
  auto a = fewshot(model, clouds, 3, 4, 4, 4, opt);
  auto b = fewshot(model, clouds, 3, 4, 4, 4, opt);
  CHECK(a.per_trial == b.per_trial);
  CHECK(a.mean == b.mean);
  CHECK(a.stddev == b.stddev);
}

TEST_CASE("export_embeddings writes label plus 2*dim fields per row") {
  auto model = tiny_model(9);
  auto clouds = tiny_clouds(1, 64);
  const auto path = fs::temp_directory_path() / "cscon_embed.tsv";
  export_embeddings(model, clouds, path);
  std::ifstream is(path);
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string field;
    std::size_t fields = 0;
    int label = -1;
    while (std::getline(ls, field, '\t')) {
      if (fields == 0) label = std::stoi(field);
      else CHECK(std::isfinite(std::stod(field)));
      ++fields;
    }
    CHECK(fields == 1 + 32);
    CHECK(label == static_cast<int>(rows) / 1 % kNumShapeClasses);
    ++rows;
  }
  CHECK(rows == clouds.size());
  fs::remove(path);
}

TEST_CASE("mean and stddev helpers") {
  CHECK(mean_of({1.0, 2.0, 3.0}) == doctest::Approx(2.0));
  CHECK(stddev_of({1.0, 2.0, 3.0}) == doctest::Approx(1.0));
  CHECK(stddev_of({5.0}) == 0.0);
}
