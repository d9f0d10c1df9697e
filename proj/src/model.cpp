#include "cscon/model.hpp"

#include <algorithm>
#include <cmath>

namespace cscon {

void ModelConfig::validate() const {
  if (depth < 0) throw ConfigError("depth", "must be >= 0");
  if (dim < 1) throw ConfigError("dim", "must be >= 1");
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("heads", "dim " + std::to_string(dim) + " must be divisible by heads " +
                                   std::to_string(heads));
  if (mlp_ratio <= 0.0) throw ConfigError("mlp_ratio", "must be > 0");
  if (n_patches < 2) throw ConfigError("n_patches", "must be >= 2");
  if (patch_size < 1) throw ConfigError("patch_size", "must be >= 1");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw ConfigError("mask_ratio", "must lie in (0, 1)");
  if (tau <= 0.0) throw ConfigError("tau", "must be > 0");
  if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("drop_path", "must lie in [0, 1)");
  if (projector_hidden < 1) throw ConfigError("projector_hidden", "must be >= 1");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.depth = 4;
  c.dim = 96;
  c.heads = 4;
  c.n_patches = 32;
  c.patch_size = 16;
  c.projector_hidden = 96;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.depth = 12;
  c.dim = 384;
  c.heads = 6;
  c.n_patches = 64;
  c.patch_size = 32;
  c.projector_hidden = 384;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.depth = 2;
  c.dim = 8;
  c.heads = 2;
  c.n_patches = 8;
  c.patch_size = 4;
  c.mask_ratio = 0.5;  // -> 4 masked patches
  c.drop_path = 0.0;
  c.projector_hidden = 8;
  return c;
}

const char* sharing_mode_name(SharingMode m) {
  return m == SharingMode::shared ? "shared" : "non_shared";
}

SharingMode sharing_mode_from_name(const std::string& name) {
  if (name == "shared") return SharingMode::shared;
  if (name == "non_shared") return SharingMode::non_shared;
  throw InvalidArgument("unknown sharing mode '" + name + "'");
}

std::int64_t mask_count(std::int64_t n_patches, double ratio) {
  const auto m = static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(n_patches)));
  return std::clamp<std::int64_t>(m, 1, n_patches - 1);
}

MaskSpec make_mask(std::int64_t n_patches, double ratio, Rng& rng) {
  if (n_patches < 2) throw InvalidArgument("make_mask: n_patches must be >= 2");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("make_mask: ratio must lie in (0, 1)");
  MaskSpec spec;
  spec.indices = rng.sample_without_replacement(n_patches, mask_count(n_patches, ratio));
  std::sort(spec.indices.begin(), spec.indices.end());
  return spec;
}

Model model_from_checkpoint(const LoadedCheckpoint& ck, const std::string& path_for_errors) {
  auto need = [&](const char* key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end())
      throw FormatError(path_for_errors, 0, std::string("checkpoint missing meta.") + key);
    return it->second;
  };
  ModelConfig cfg;
  cfg.depth = static_cast<int>(need("depth"));
  cfg.dim = static_cast<int>(need("dim"));
  cfg.heads = static_cast<int>(need("heads"));
  cfg.mlp_ratio = need("mlp_ratio");
  cfg.n_patches = static_cast<int>(need("n_patches"));
  cfg.patch_size = static_cast<int>(need("patch_size"));
  cfg.mask_ratio = need("mask_ratio");
  cfg.tau = need("tau");
  cfg.drop_path = need("drop_path");
  cfg.projector_hidden = static_cast<int>(need("projector_hidden"));
  const auto sharing = static_cast<SharingMode>(static_cast<int>(need("sharing")));
  Model model(cfg, sharing, /*init_seed=*/0);
  load_params(model.params(), ck, path_for_errors);
  return model;
}

}  // namespace cscon
