// Command-line driver: dataset generation, pretraining, probing, few-shot
// evaluation, ablation sweeps, and embedding export.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cscon/evaluation.hpp"
#include "cscon/model.hpp"
#include "cscon/runconfig.hpp"
#include "cscon/synthdata.hpp"
#include "cscon/training.hpp"

namespace fs = std::filesystem;
using namespace cscon;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string profile;
  std::string augment, loss, sharing, positive_pair, protocol, sweep;
  double mask_ratio = -1.0, tau = -1.0;
  std::int64_t seed = -1;
  int way = 5, shot = 10, trials = 10, query = 20;
};

RunConfig resolve_config(const Flags& f, bool need_config_file) {
  RunConfig cfg;
  if (!f.profile.empty()) apply_profile(cfg, f.profile);
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw IoError(f.config, "config file does not exist");
    cfg = parse_run_config(f.config, cfg);
  } else if (need_config_file) {
    throw ConfigError("config", "a --config file is required");
  }
  if (f.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(f.seed);
  if (f.mask_ratio >= 0.0) cfg.model.mask_ratio = f.mask_ratio;
  if (f.tau >= 0.0) cfg.model.tau = f.tau;
  if (!f.augment.empty()) cfg.train.augment = augment_policy_from_name(f.augment);
  if (!f.loss.empty()) cfg.train.loss = loss_variant_from_name(f.loss);
  if (!f.sharing.empty()) cfg.train.sharing = sharing_mode_from_name(f.sharing);
  if (!f.positive_pair.empty())
    cfg.train.positive_pair = positive_pair_from_name(f.positive_pair);
  if (!f.data.empty()) cfg.data_dir = f.data;
  cfg.validate();
  return cfg;
}

std::vector<PointCloud> load_split(const std::string& data_dir, const std::string& split) {
  if (data_dir.empty()) throw ConfigError("data_dir", "no dataset directory configured");
  const fs::path manifest = fs::path(data_dir) / kManifestFilename;
  if (!fs::exists(manifest)) throw IoError(manifest.string(), "manifest does not exist");
  return load_dataset(load_manifest(manifest), split);
}

Model load_model(const std::string& checkpoint) {
  if (!fs::exists(checkpoint)) throw IoError(checkpoint, "checkpoint does not exist");
  return model_from_checkpoint(load_checkpoint(checkpoint), checkpoint);
}

void print_accuracy(const char* protocol, double mean, double stddev) {
  std::printf("protocol: %s\naccuracy: %.4f ± %.4f\n", protocol, mean, stddev);
}

void write_probe_row(const fs::path& out, const std::string& protocol, double mean,
                     double stddev) {
  std::vector<AblationRow> rows{{protocol, mean, stddev}};
  write_results_table(rows, "protocol", out);
}

int run(int argc, char** argv) {
  CLI::App app{"Dual-branch center-surrounding contrastive pretraining for point clouds"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shape dataset");
  gen->add_option("--config", f.config, "config file")->required();
  gen->add_option("--out", f.out, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Run self-supervised pretraining");
  pre->add_option("--config", f.config, "config file")->required();
  pre->add_option("--out", f.out, "output directory")->required();
  pre->add_option("--seed", f.seed, "training seed");
  pre->add_option("--mask-ratio", f.mask_ratio, "masking ratio");
  pre->add_option("--tau", f.tau, "temperature");
  pre->add_option("--augment", f.augment, "augmentation policy");
  pre->add_option("--loss", f.loss, "inner|inter|alignment");
  pre->add_option("--sharing", f.sharing, "shared|non_shared");
  pre->add_option("--positive-pair", f.positive_pair, "cs|ss");
  pre->add_option("--profile", f.profile, "desk|paper");
  pre->add_option("--data", f.data, "dataset directory (overrides config)");

  auto* probe = app.add_subcommand("probe", "Evaluate a checkpoint with a transfer protocol");
  probe->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  probe->add_option("--data", f.data, "dataset directory")->required();
  probe->add_option("--protocol", f.protocol, "full|linear|mlp3")->required();
  probe->add_option("--config", f.config, "config file");
  probe->add_option("--out", f.out, "output directory (defaults to checkpoint dir)");

  auto* few = app.add_subcommand("fewshot", "Few-shot episodes on frozen features");
  few->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  few->add_option("--data", f.data, "dataset directory")->required();
  few->add_option("--way", f.way, "classes per episode")->required();
  few->add_option("--shot", f.shot, "support samples per class")->required();
  few->add_option("--trials", f.trials, "episode count")->required();
  few->add_option("--query", f.query, "query samples per class");
  few->add_option("--config", f.config, "config file");

  auto* abl = app.add_subcommand("ablate", "Sweep one knob and probe each point");
  abl->add_option("--sweep", f.sweep, "mask_ratio|augment|tau|sharing|loss|positive_pair")
      ->required();
  abl->add_option("--config", f.config, "config file")->required();
  abl->add_option("--out", f.out, "output directory")->required();
  abl->add_option("--data", f.data, "dataset directory (overrides config)");

  auto* exp = app.add_subcommand("export-embeddings", "Write features for external tooling");
  exp->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  exp->add_option("--data", f.data, "dataset directory")->required();
  exp->add_option("--out", f.out, "output file")->required();
  exp->add_option("--config", f.config, "config file");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    RunConfig cfg = resolve_config(f, /*need_config_file=*/true);
    cfg.data_dir = f.out;
    build_dataset(cfg.dataset, f.out);
    write_config_echo(cfg, f.out);
    std::printf("dataset: %s (%lld train, %lld test)\n", f.out.c_str(),
                static_cast<long long>(cfg.dataset.train_per_class * kNumShapeClasses),
                static_cast<long long>(cfg.dataset.test_per_class * kNumShapeClasses));
    return 0;
  }

  if (pre->parsed()) {
    RunConfig cfg = resolve_config(f, /*need_config_file=*/true);
    auto train_clouds = load_split(cfg.data_dir, "train");
    write_config_echo(cfg, f.out);
    auto result = pretrain(cfg.model, cfg.train, train_clouds, f.out);
    std::printf("pretrain: %s\nfirst_epoch_loss: %.6f\nfinal_epoch_loss: %.6f\n",
                result.final_checkpoint.string().c_str(), result.epoch_mean_loss.front(),
                result.epoch_mean_loss.back());
    return 0;
  }

  if (probe->parsed()) {
    RunConfig cfg = resolve_config(f, /*need_config_file=*/false);
    Model model = load_model(f.checkpoint);
    auto train_clouds = load_split(f.data, "train");
    auto test_clouds = load_split(f.data, "test");
    const fs::path out_dir = f.out.empty() ? fs::path(f.checkpoint).parent_path() : fs::path(f.out);
    fs::create_directories(out_dir);
    if (f.protocol == "linear" || f.protocol == "mlp3") {
      auto train_features = extract_features(model, train_clouds);
      auto test_features = extract_features(model, test_clouds);
      auto r = f.protocol == "linear" ? probe_linear(train_features, test_features, cfg.probe)
                                      : probe_mlp3(train_features, test_features, cfg.probe);
      print_accuracy(f.protocol.c_str(), r.mean, r.stddev);
      write_probe_row(out_dir / ("results_probe_" + f.protocol + ".tsv"), f.protocol, r.mean,
                      r.stddev);
    } else if (f.protocol == "full") {
      FinetuneOptions opt;
      opt.seed = cfg.probe.seed;
      const double acc = finetune_full(model, train_clouds, test_clouds, opt);
      print_accuracy("full", acc, 0.0);
      write_probe_row(out_dir / "results_probe_full.tsv", "full", acc, 0.0);
    } else {
      throw ConfigError("protocol", "unknown protocol '" + f.protocol + "' (full|linear|mlp3)");
    }
    return 0;
  }

  if (few->parsed()) {
    RunConfig cfg = resolve_config(f, /*need_config_file=*/false);
    Model model = load_model(f.checkpoint);
    auto pool = load_split(f.data, "test");
    auto r = fewshot(model, pool, f.way, f.shot, f.trials, f.query, cfg.probe);
    std::printf("fewshot: %d-way %d-shot, %d trials\naccuracy: %.4f ± %.4f\n", f.way, f.shot,
                f.trials, r.mean, r.stddev);
    return 0;
  }

  if (abl->parsed()) {
    RunConfig cfg = resolve_config(f, /*need_config_file=*/true);
    auto train_clouds = load_split(cfg.data_dir, "train");
    auto test_clouds = load_split(cfg.data_dir, "test");
    write_config_echo(cfg, f.out);
    auto rows = run_ablation(f.sweep, cfg.model, cfg.train, cfg.probe, train_clouds,
                             test_clouds, f.out);
    for (const auto& r : rows)
      std::printf("%s\t%s\t%.4f\t%.4f\n", f.sweep.c_str(), r.value.c_str(), r.accuracy_mean,
                  r.accuracy_std);
    return 0;
  }

  if (exp->parsed()) {
    Model model = load_model(f.checkpoint);
    auto clouds = load_split(f.data, "test");
    export_embeddings(model, clouds, f.out);
    std::printf("embeddings: %s (%zu rows)\n", f.out.c_str(), clouds.size());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: format: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return 3;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "error: train: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
}
