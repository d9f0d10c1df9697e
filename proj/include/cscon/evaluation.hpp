#pragma once

// Transfer protocols over a frozen (or unfrozen, for FULL) backbone:
// feature extraction, linear / 3-layer probes, full fine-tuning, few-shot
// episodes, and embedding export.

#include <filesystem>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/geometry.hpp"
#include "cscon/model.hpp"
#include "cscon/optim.hpp"
#include "cscon/training.hpp"

namespace cscon {

// Per-cloud global feature: concat of mean-pool and max-pool over the
// pre-projector encoder tokens, so dimension = 2 * model dim.
struct FeatureSet {
  std::vector<std::vector<float>> features;
  std::vector<int> labels;
  std::int64_t dim = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(features.size()); }
};

std::vector<float> extract_global(Model& model, const PointCloud& cloud);
FeatureSet extract_features(Model& model, const std::vector<PointCloud>& clouds);

struct ProbeResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_seed;
};

ProbeResult probe_linear(const FeatureSet& train, const FeatureSet& test,
                         const ProbeOptions& opt);
ProbeResult probe_mlp3(const FeatureSet& train, const FeatureSet& test,
                       const ProbeOptions& opt);

struct FinetuneOptions {
  int epochs = 30;
  int batch_size = 32;
  double lr = 5e-4;
  double weight_decay = 0.05;
  double dropout = 0.5;
  std::uint64_t seed = 1234;
};

// Unfreezes the backbone and trains it end-to-end with an MLP-3 head.
double finetune_full(Model& model, const std::vector<PointCloud>& train_clouds,
                     const std::vector<PointCloud>& test_clouds, const FinetuneOptions& opt);

struct Episode {
  std::vector<int> classes;                    // remapped label = position
  std::vector<std::int64_t> support_rows;
  std::vector<int> support_labels;
  std::vector<std::int64_t> query_rows;
  std::vector<int> query_labels;
};

Episode sample_episode(const FeatureSet& pool, int way, int shot, int query_per_class,
                       Rng& rng);

struct FewshotResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_trial;
};

FewshotResult fewshot(Model& model, const std::vector<PointCloud>& pool, int way, int shot,
                      int trials, int query_per_class, const ProbeOptions& opt);

// Tab-separated rows: label then 2*dim feature values.
void export_embeddings(Model& model, const std::vector<PointCloud>& clouds,
                       const std::filesystem::path& path);

double mean_of(const std::vector<double>& xs);
double stddev_of(const std::vector<double>& xs);

}  // namespace cscon
