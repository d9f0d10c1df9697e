#pragma once

// Pretraining loop, train trace, checkpoint cadence, and the ablation
// runner. Everything is single-threaded and fully determined by the seed.

#include <filesystem>
#include <string>
#include <vector>

#include "cscon/common.hpp"
#include "cscon/geometry.hpp"
#include "cscon/model.hpp"
#include "cscon/optim.hpp"
#include "cscon/pipeline.hpp"
#include "cscon/synthdata.hpp"

namespace cscon {

struct TrainConfig {
  int epochs = 30;
  int warmup_epochs = 3;
  int batch_size = 32;
  double base_lr = 1e-3;
  double min_lr = 1e-6;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  AugmentPolicy augment = AugmentPolicy::scale_translate_rotation;
  LossVariant loss = LossVariant::inner;
  SharingMode sharing = SharingMode::shared;
  PositivePair positive_pair = PositivePair::center_surrounding;
  int checkpoint_every = 10;  // epochs; 0 disables cadence checkpoints
  double grad_clip = 10.0;
  bool fps_random_start = true;

  void validate() const;

  static TrainConfig desk();
  static TrainConfig paper();
};

struct TraceRow {
  std::int64_t step;
  int epoch;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::vector<double> epoch_mean_loss;
  std::filesystem::path final_checkpoint;
  std::filesystem::path trace_path;
};

inline constexpr const char* kTraceFilename = "trace.tsv";
inline constexpr const char* kFinalCheckpoint = "ckpt_final.ckpt";

TrainResult pretrain(const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const std::vector<PointCloud>& dataset,
                     const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

struct ProbeOptions {
  int epochs = 100;
  int batch_size = 64;
  double lr = 1e-2;
  double weight_decay = 1e-4;
  int n_seeds = 3;
  double dropout = 0.5;  // mlp3 / full heads only
  std::uint64_t seed = 1234;
};

struct AblationRow {
  std::string value;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
};

inline constexpr const char* kResultsFilename = "results.tsv";

std::vector<std::string> ablation_knobs();

// Pretrains once per sweep point (knob applied over the base configs), runs
// the linear probe, and writes one row per point to out_dir/results.tsv.
std::vector<AblationRow> run_ablation(const std::string& knob, const ModelConfig& model_cfg,
                                      const TrainConfig& train_cfg, const ProbeOptions& probe,
                                      const std::vector<PointCloud>& train_clouds,
                                      const std::vector<PointCloud>& test_clouds,
                                      const std::filesystem::path& out_dir);

void write_results_table(const std::vector<AblationRow>& rows, const std::string& knob,
                         const std::filesystem::path& path);

}  // namespace cscon
