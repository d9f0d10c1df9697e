#include "cscon/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cscon/evaluation.hpp"
#include "cscon/loss.hpp"

namespace cscon {

const char* loss_variant_name(LossVariant v) {
  switch (v) {
    case LossVariant::inner: return "inner";
    case LossVariant::inter: return "inter";
    case LossVariant::alignment_target: return "alignment";
  }
  throw InvalidArgument("unknown loss variant");
}

LossVariant loss_variant_from_name(const std::string& name) {
  if (name == "inner") return LossVariant::inner;
  if (name == "inter") return LossVariant::inter;
  if (name == "alignment" || name == "alignment_target") return LossVariant::alignment_target;
  throw InvalidArgument("unknown loss variant '" + name + "' (inner|inter|alignment)");
}

const char* positive_pair_name(PositivePair p) {
  return p == PositivePair::center_surrounding ? "cs" : "ss";
}

PositivePair positive_pair_from_name(const std::string& name) {
  if (name == "cs" || name == "center_surrounding") return PositivePair::center_surrounding;
  if (name == "ss" || name == "surrounding_surrounding")
    return PositivePair::surrounding_surrounding;
  throw InvalidArgument("unknown positive pair '" + name + "' (cs|ss)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs)
    throw ConfigError("warmup_epochs", "must satisfy 0 <= warmup < epochs");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (base_lr <= 0.0) throw ConfigError("base_lr", "must be > 0");
  if (min_lr < 0.0 || min_lr > base_lr)
    throw ConfigError("min_lr", "must lie in [0, base_lr]");
  if (weight_decay < 0.0) throw ConfigError("weight_decay", "must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");
  if (grad_clip <= 0.0) throw ConfigError("grad_clip", "must be > 0");
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.epochs = 300;
  c.warmup_epochs = 10;
  c.batch_size = 128;
  c.base_lr = 5e-4;
  c.weight_decay = 0.05;
  return c;
}

// ---------------------------------------------------------------------------
// Pretraining loop
// ---------------------------------------------------------------------------

namespace {

std::string format_row(const TraceRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%lld\t%d\t%.9g\t%.9g", static_cast<long long>(r.step),
                r.epoch, r.lr, r.loss);
  return buf;
}

}  // namespace

TrainResult pretrain(const ModelConfig& model_cfg, const TrainConfig& cfg,
                     const std::vector<PointCloud>& dataset,
                     const std::filesystem::path& out_dir) {
  model_cfg.validate();
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("pretrain: empty dataset");
  std::filesystem::create_directories(out_dir);

  Model model(model_cfg, cfg.sharing, cfg.seed);
  AdamW optimizer(model.params(), {cfg.beta1, cfg.beta2, cfg.adam_eps});
  auto param_list = AdamW::collect(model.params());

  const std::int64_t n = static_cast<std::int64_t>(dataset.size());
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const std::int64_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  TrainResult result;
  result.trace_path = out_dir / kTraceFilename;
  std::ofstream trace(result.trace_path);
  if (!trace) throw IoError(result.trace_path.string(), "cannot open trace for writing");

  const AugmentParams aug_params;
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  auto save_cadence = [&](int epoch) {
    char name[64];
    std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.ckpt", epoch);
    save_params(model.params(), out_dir / name, model.meta());
  };

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix64(cfg.seed, 0x51u, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::int64_t epoch_steps = 0;
    for (std::int64_t off = 0; off < n; off += cfg.batch_size, ++step) {
      const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, n - off);
      Rng step_rng(mix64(cfg.seed, 0x57e9u, static_cast<std::uint64_t>(step)));
      std::vector<PatchSet> batch;
      std::vector<MaskSpec> masks, masks_b;
      batch.reserve(bsz);
      for (std::int64_t i = 0; i < bsz; ++i) {
        const PointCloud& cloud = dataset[static_cast<std::size_t>(order[off + i])];
        PointCloud aug = augment(cloud, cfg.augment, step_rng, aug_params);
        const std::int64_t start =
            cfg.fps_random_start ? step_rng.uniform_int(aug.size()) : 0;
        batch.push_back(
            patchify(aug, model_cfg.n_patches, model_cfg.patch_size, start));
        masks.push_back(make_mask(model_cfg.n_patches, model_cfg.mask_ratio, step_rng));
        if (cfg.positive_pair == PositivePair::surrounding_surrounding)
          masks_b.push_back(make_mask(model_cfg.n_patches, model_cfg.mask_ratio, step_rng));
      }

      model.params().zero_grads();
      auto loss = pretrain_step_loss(model, batch, masks, masks_b, cfg.loss,
                                     cfg.positive_pair, model_cfg.tau,
                                     model_cfg.drop_path > 0.0 ? &step_rng : nullptr);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        trace.flush();
        throw TrainingError("non-finite loss at step " + std::to_string(step) +
                            " (epoch " + std::to_string(epoch) +
                            "); last cadence checkpoint retained in " + out_dir.string());
      }
      loss.backward();
      clip_grad_norm(param_list, cfg.grad_clip);
      const double lr = lr_at_step(cfg.base_lr, cfg.min_lr, step, warmup_steps, total_steps);
      optimizer.step(lr, cfg.weight_decay);

      TraceRow row{step, epoch, lr, loss_value};
      result.trace.push_back(row);
      trace << format_row(row) << '\n';
      epoch_loss += loss_value;
      ++epoch_steps;
    }
    trace.flush();
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(epoch_steps));
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs)
      save_cadence(epoch + 1);
  }

  result.final_checkpoint = out_dir / kFinalCheckpoint;
  save_params(model.params(), result.final_checkpoint, model.meta());
  return result;
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

std::vector<std::string> ablation_knobs() {
  return {"mask_ratio", "augment", "tau", "sharing", "loss", "positive_pair"};
}

void write_results_table(const std::vector<AblationRow>& rows, const std::string& knob,
                         const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot write results table");
  os << "knob\tvalue\taccuracy_mean\taccuracy_std\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%.6f\t%.6f", knob.c_str(), r.value.c_str(),
                  r.accuracy_mean, r.accuracy_std);
    os << buf << '\n';
  }
  if (!os) throw IoError(path.string(), "results table write failed");
}

std::vector<AblationRow> run_ablation(const std::string& knob, const ModelConfig& model_cfg,
                                      const TrainConfig& train_cfg, const ProbeOptions& probe,
                                      const std::vector<PointCloud>& train_clouds,
                                      const std::vector<PointCloud>& test_clouds,
                                      const std::filesystem::path& out_dir) {
  struct Point {
    std::string value;
    ModelConfig m;
    TrainConfig t;
  };
  std::vector<Point> points;
  auto base = [&](const std::string& value) { return Point{value, model_cfg, train_cfg}; };

  if (knob == "mask_ratio") {
    for (double r : {0.3, 0.6, 0.9}) {
      auto p = base(std::to_string(r).substr(0, 3));
      p.m.mask_ratio = r;
      points.push_back(p);
    }
  } else if (knob == "tau") {
    for (double tau : {0.05, 0.1, 0.5, 1.0, 2.0}) {
      std::ostringstream v;
      v << tau;
      auto p = base(v.str());
      p.m.tau = tau;
      points.push_back(p);
    }
  } else if (knob == "augment") {
    for (int i = 0; i <= static_cast<int>(AugmentPolicy::rotation_scale_translate); ++i) {
      const auto policy = static_cast<AugmentPolicy>(i);
      auto p = base(augment_policy_name(policy));
      p.t.augment = policy;
      points.push_back(p);
    }
  } else if (knob == "sharing") {
    for (auto mode : {SharingMode::shared, SharingMode::non_shared}) {
      auto p = base(sharing_mode_name(mode));
      p.t.sharing = mode;
      points.push_back(p);
    }
  } else if (knob == "loss") {
    for (auto v : {LossVariant::inner, LossVariant::inter}) {
      auto p = base(loss_variant_name(v));
      p.t.loss = v;
      points.push_back(p);
    }
  } else if (knob == "positive_pair") {
    for (auto v : {PositivePair::center_surrounding, PositivePair::surrounding_surrounding}) {
      auto p = base(positive_pair_name(v));
      p.t.positive_pair = v;
      points.push_back(p);
    }
  } else {
    std::string valid;
    for (const auto& k : ablation_knobs()) valid += (valid.empty() ? "" : "|") + k;
    throw InvalidArgument("unknown sweep knob '" + knob + "' (valid: " + valid + ")");
  }

  std::vector<AblationRow> rows;
  for (auto& point : points) {
    const auto run_dir = out_dir / ("sweep_" + knob + "_" + point.value);
    auto trained = pretrain(point.m, point.t, train_clouds, run_dir);
    Model model = model_from_checkpoint(load_checkpoint(trained.final_checkpoint),
                                        trained.final_checkpoint.string());
    auto train_features = extract_features(model, train_clouds);
    auto test_features = extract_features(model, test_clouds);
    auto acc = probe_linear(train_features, test_features, probe);
    rows.push_back({point.value, acc.mean, acc.stddev});
  }
  write_results_table(rows, knob, out_dir / kResultsFilename);
  return rows;
}

}  // namespace cscon
