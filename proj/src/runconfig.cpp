#include "cscon/runconfig.hpp"

#include <fstream>
#include <sstream>

namespace cscon {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (dataset.train_per_class < 1) throw ConfigError("dataset.train_per_class", "must be >= 1");
  if (dataset.test_per_class < 1) throw ConfigError("dataset.test_per_class", "must be >= 1");
  if (dataset.n_points < 16) throw ConfigError("dataset.n_points", "must be >= 16");
  if (dataset.noise < 0.0) throw ConfigError("dataset.noise", "must be >= 0");
  if (probe.epochs < 1) throw ConfigError("probe.epochs", "must be >= 1");
  if (probe.batch_size < 1) throw ConfigError("probe.batch_size", "must be >= 1");
  if (probe.lr <= 0.0) throw ConfigError("probe.lr", "must be > 0");
  if (probe.n_seeds < 1) throw ConfigError("probe.n_seeds", "must be >= 1");
  if (probe.dropout < 0.0 || probe.dropout >= 1.0)
    throw ConfigError("probe.dropout", "must lie in [0, 1)");
}

void apply_profile(RunConfig& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg.model = ModelConfig::desk();
    cfg.train = TrainConfig::desk();
  } else if (profile == "paper") {
    cfg.model = ModelConfig::paper();
    cfg.train = TrainConfig::paper();
  } else {
    throw ConfigError("profile", "unknown profile '" + profile + "' (desk|paper)");
  }
  cfg.profile = profile;
}

void set_config_field(RunConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "run") {
    if (key == "profile") apply_profile(cfg, value);
    else if (key == "data_dir") cfg.data_dir = value;
    else throw ConfigError(full, "unknown key");
    return;
  }
  if (section == "model") {
    auto& m = cfg.model;
    if (key == "depth") m.depth = to_int(full, value);
    else if (key == "dim") m.dim = to_int(full, value);
    else if (key == "heads") m.heads = to_int(full, value);
    else if (key == "mlp_ratio") m.mlp_ratio = to_double(full, value);
    else if (key == "n_patches") m.n_patches = to_int(full, value);
    else if (key == "patch_size") m.patch_size = to_int(full, value);
    else if (key == "mask_ratio") m.mask_ratio = to_double(full, value);
    else if (key == "tau") m.tau = to_double(full, value);
    else if (key == "drop_path") m.drop_path = to_double(full, value);
    else if (key == "projector_hidden") m.projector_hidden = to_int(full, value);
    else throw ConfigError(full, "unknown key");
    return;
  }
  if (section == "train") {
    auto& t = cfg.train;
    if (key == "epochs") t.epochs = to_int(full, value);
    else if (key == "warmup_epochs") t.warmup_epochs = to_int(full, value);
    else if (key == "batch_size") t.batch_size = to_int(full, value);
    else if (key == "base_lr") t.base_lr = to_double(full, value);
    else if (key == "min_lr") t.min_lr = to_double(full, value);
    else if (key == "weight_decay") t.weight_decay = to_double(full, value);
    else if (key == "seed") t.seed = to_u64(full, value);
    else if (key == "augment") t.augment = augment_policy_from_name(value);
    else if (key == "loss") t.loss = loss_variant_from_name(value);
    else if (key == "sharing") t.sharing = sharing_mode_from_name(value);
    else if (key == "positive_pair") t.positive_pair = positive_pair_from_name(value);
    else if (key == "checkpoint_every") t.checkpoint_every = to_int(full, value);
    else if (key == "grad_clip") t.grad_clip = to_double(full, value);
    else if (key == "fps_random_start") t.fps_random_start = to_bool(full, value);
    else throw ConfigError(full, "unknown key");
    return;
  }
  if (section == "dataset") {
    auto& d = cfg.dataset;
    if (key == "train_per_class") d.train_per_class = to_int(full, value);
    else if (key == "test_per_class") d.test_per_class = to_int(full, value);
    else if (key == "n_points") d.n_points = to_int(full, value);
    else if (key == "seed") d.seed = to_u64(full, value);
    else if (key == "noise") d.noise = to_double(full, value);
    else throw ConfigError(full, "unknown key");
    return;
  }
  if (section == "probe") {
    auto& p = cfg.probe;
    if (key == "epochs") p.epochs = to_int(full, value);
    else if (key == "batch_size") p.batch_size = to_int(full, value);
    else if (key == "lr") p.lr = to_double(full, value);
    else if (key == "weight_decay") p.weight_decay = to_double(full, value);
    else if (key == "n_seeds") p.n_seeds = to_int(full, value);
    else if (key == "dropout") p.dropout = to_double(full, value);
    else if (key == "seed") p.seed = to_u64(full, value);
    else throw ConfigError(full, "unknown key");
    return;
  }
  throw ConfigError(section, "unknown section");
}

RunConfig parse_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError(path.string(), "cannot open config file");
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(path.string() + ":" + std::to_string(line_no),
                          "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no),
                        "expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError(key, "key appears before any [section] header");
    set_config_field(base, section, key, value);
  }
  return base;
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "[run]\n";
  os << "profile = " << cfg.profile << "\n";
  os << "data_dir = " << cfg.data_dir << "\n";
  os << "\n[model]\n";
  os << "depth = " << cfg.model.depth << "\n";
  os << "dim = " << cfg.model.dim << "\n";
  os << "heads = " << cfg.model.heads << "\n";
  os << "mlp_ratio = " << cfg.model.mlp_ratio << "\n";
  os << "n_patches = " << cfg.model.n_patches << "\n";
  os << "patch_size = " << cfg.model.patch_size << "\n";
  os << "mask_ratio = " << cfg.model.mask_ratio << "\n";
  os << "tau = " << cfg.model.tau << "\n";
  os << "drop_path = " << cfg.model.drop_path << "\n";
  os << "projector_hidden = " << cfg.model.projector_hidden << "\n";
  os << "\n[train]\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "warmup_epochs = " << cfg.train.warmup_epochs << "\n";
  os << "batch_size = " << cfg.train.batch_size << "\n";
  os << "base_lr = " << cfg.train.base_lr << "\n";
  os << "min_lr = " << cfg.train.min_lr << "\n";
  os << "weight_decay = " << cfg.train.weight_decay << "\n";
  os << "seed = " << cfg.train.seed << "\n";
  os << "augment = " << augment_policy_name(cfg.train.augment) << "\n";
  os << "loss = " << loss_variant_name(cfg.train.loss) << "\n";
  os << "sharing = " << sharing_mode_name(cfg.train.sharing) << "\n";
  os << "positive_pair = " << positive_pair_name(cfg.train.positive_pair) << "\n";
  os << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
  os << "grad_clip = " << cfg.train.grad_clip << "\n";
  os << "fps_random_start = " << (cfg.train.fps_random_start ? "true" : "false") << "\n";
  os << "\n[dataset]\n";
  os << "train_per_class = " << cfg.dataset.train_per_class << "\n";
  os << "test_per_class = " << cfg.dataset.test_per_class << "\n";
  os << "n_points = " << cfg.dataset.n_points << "\n";
  os << "seed = " << cfg.dataset.seed << "\n";
  os << "noise = " << cfg.dataset.noise << "\n";
  os << "\n[probe]\n";
  os << "epochs = " << cfg.probe.epochs << "\n";
  os << "batch_size = " << cfg.probe.batch_size << "\n";
  os << "lr = " << cfg.probe.lr << "\n";
  os << "weight_decay = " << cfg.probe.weight_decay << "\n";
  os << "n_seeds = " << cfg.probe.n_seeds << "\n";
  os << "dropout = " << cfg.probe.dropout << "\n";
  os << "seed = " << cfg.probe.seed << "\n";
  return os.str();
}

void write_config_echo(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / kEchoFilename;
  std::ofstream os(path);
  if (!os) throw IoError(path.string(), "cannot write config echo");
  os << render_run_config(cfg);
  if (!os) throw IoError(path.string(), "config echo write failed");
}

}  // namespace cscon
