#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cscon/runconfig.hpp"

using namespace cscon;
namespace fs = std::filesystem;

namespace {

const char* kBin = CSCON_BIN_PATH;

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("cscon_cli_") + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args, std::string* output = nullptr) {
  const auto out_file = fs::temp_directory_path() / "cscon_cli_out.txt";
  const std::string cmd = std::string(kBin) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream is(out_file);
    std::stringstream ss;
    ss << is.rdbuf();
    *output = ss.str();
  }
  return WEXITSTATUS(status);
}

void write_tiny_config(const fs::path& path, const fs::path& data_dir, int epochs = 2) {
  std::ofstream os(path);
  os << "[run]\n";
  os << "data_dir = " << data_dir.string() << "\n";
  os << "[model]\n";
  os << "depth = 1\ndim = 16\nheads = 2\nn_patches = 8\npatch_size = 4\n";
  os << "projector_hidden = 16\n";
  os << "[train]\n";
  os << "epochs = " << epochs << "\nwarmup_epochs = 1\nbatch_size = 8\nseed = 3\n";
  os << "[dataset]\n";
  os << "train_per_class = 3\ntest_per_class = 2\nn_points = 64\nseed = 11\n";
  os << "[probe]\n";
  os << "epochs = 20\nn_seeds = 2\n";
}

}  // namespace

TEST_CASE("config parse, override, and echo round-trip") {
  TempDir dir("cfg");
  write_tiny_config(dir.path / "run.ini", dir.path / "data");
  auto cfg = parse_run_config(dir.path / "run.ini");
  CHECK(cfg.model.dim == 16);
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.dataset.n_points == 64);

  set_config_field(cfg, "model", "tau", "0.5");
  CHECK(cfg.model.tau == doctest::Approx(0.5));
  CHECK_THROWS_AS(set_config_field(cfg, "model", "nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_field(cfg, "nowhere", "x", "1"), ConfigError);

  write_config_echo(cfg, dir.path / "echo");
  auto back = parse_run_config(dir.path / "echo" / kEchoFilename);
  CHECK(back.model.tau == doctest::Approx(0.5));
  CHECK(back.model.dim == 16);
  CHECK(back.train.seed == 3);
  CHECK(back.data_dir == cfg.data_dir);
}

TEST_CASE("profiles pin the published defaults") {
  RunConfig cfg;
  apply_profile(cfg, "paper");
  CHECK(cfg.model.depth == 12);
  CHECK(cfg.model.dim == 384);
  CHECK(cfg.model.heads == 6);
  CHECK(cfg.model.n_patches == 64);
  CHECK(cfg.model.patch_size == 32);
  CHECK(cfg.model.mask_ratio == doctest::Approx(0.6));
  CHECK(cfg.model.tau == doctest::Approx(1.0));
  CHECK(cfg.model.drop_path == doctest::Approx(0.1));
  CHECK(cfg.train.epochs == 300);
  CHECK(cfg.train.warmup_epochs == 10);
  CHECK(cfg.train.batch_size == 128);
  CHECK(cfg.train.base_lr == doctest::Approx(5e-4));
  CHECK(cfg.train.weight_decay == doctest::Approx(0.05));

  apply_profile(cfg, "desk");
  CHECK(cfg.model.depth == 4);
  CHECK(cfg.model.dim == 96);
  CHECK(cfg.model.heads == 4);
  CHECK(cfg.model.n_patches == 32);
  CHECK(cfg.model.patch_size == 16);
  CHECK(cfg.train.epochs == 30);
  CHECK(cfg.train.warmup_epochs == 3);
  CHECK(cfg.train.batch_size == 32);

  CHECK_THROWS_AS(apply_profile(cfg, "galactic"), ConfigError);
}

TEST_CASE("cli end-to-end: gen-data, pretrain, probe, fewshot, export") {
  TempDir dir("e2e");
  const auto cfg_path = dir.path / "run.ini";
  const auto data_dir = dir.path / "data";
  write_tiny_config(cfg_path, data_dir);

  std::string out;
  REQUIRE(run("gen-data --config " + cfg_path.string() + " --out " + data_dir.string(),
              &out) == 0);
  CHECK(fs::exists(data_dir / kManifestFilename));

  const auto run_dir = dir.path / "run1";
  REQUIRE(run("pretrain --config " + cfg_path.string() + " --out " + run_dir.string(),
              &out) == 0);
  CHECK(fs::exists(run_dir / "ckpt_final.ckpt"));
  CHECK(fs::exists(run_dir / "trace.tsv"));
  CHECK(fs::exists(run_dir / kEchoFilename));

  // identical seeds twice -> identical traces
  const auto run_dir2 = dir.path / "run2";
  REQUIRE(run("pretrain --config " + cfg_path.string() + " --out " + run_dir2.string(),
              &out) == 0);
  std::ifstream t1(run_dir / "trace.tsv"), t2(run_dir2 / "trace.tsv");
  std::stringstream s1, s2;
  s1 << t1.rdbuf();
  s2 << t2.rdbuf();
  CHECK(s1.str() == s2.str());

  const std::string ckpt = (run_dir / "ckpt_final.ckpt").string();
  REQUIRE(run("probe --checkpoint " + ckpt + " --data " + data_dir.string() +
                  " --protocol linear --config " + cfg_path.string(),
              &out) == 0);
  CHECK(out.find("accuracy:") != std::string::npos);
  CHECK(fs::exists(run_dir / "results_probe_linear.tsv"));

  REQUIRE(run("fewshot --checkpoint " + ckpt + " --data " + data_dir.string() +
                  " --way 2 --shot 1 --trials 2 --query 1",
              &out) == 0);
  CHECK(out.find("accuracy:") != std::string::npos);

  const auto embed = dir.path / "embed.tsv";
  REQUIRE(run("export-embeddings --checkpoint " + ckpt + " --data " + data_dir.string() +
                  " --out " + embed.string(),
              &out) == 0);
  CHECK(fs::exists(embed));
}

TEST_CASE("cli error codes: usage 2 / config 2 / io 3") {
  TempDir dir("err");
  std::string out;

  SUBCASE("unknown flag is rejected") {
    CHECK(run("pretrain --config x --out y --warp 9", &out) != 0);
  }
  SUBCASE("unknown subcommand is rejected") { CHECK(run("transmogrify", &out) != 0); }
  SUBCASE("missing config file is an io error") {
    CHECK(run("pretrain --config " + (dir.path / "ghost.ini").string() + " --out " +
                  (dir.path / "o").string(),
              &out) == 3);
    CHECK(out.find("error: io:") != std::string::npos);
  }
  SUBCASE("bad config value names the field") {
    std::ofstream os(dir.path / "bad.ini");
    os << "[model]\ndepth = banana\n";
    os.close();
    CHECK(run("pretrain --config " + (dir.path / "bad.ini").string() + " --out " +
                  (dir.path / "o").string(),
              &out) == 2);
    CHECK(out.find("error: config:") != std::string::npos);
    CHECK(out.find("model.depth") != std::string::npos);
  }
  SUBCASE("missing dataset directory is an io error") {
    write_tiny_config(dir.path / "run.ini", dir.path / "absent");
    CHECK(run("pretrain --config " + (dir.path / "run.ini").string() + " --out " +
                  (dir.path / "o").string(),
              &out) == 3);
  }
  SUBCASE("missing checkpoint is an io error") {
    CHECK(run("probe --checkpoint " + (dir.path / "none.ckpt").string() + " --data " +
                  dir.path.string() + " --protocol linear",
              &out) == 3);
  }
}

TEST_CASE("cli ablation sweep writes the results table") {
  TempDir dir("abl");
  const auto cfg_path = dir.path / "run.ini";
  const auto data_dir = dir.path / "data";
  write_tiny_config(cfg_path, data_dir, /*epochs=*/1);
  std::string out;
  REQUIRE(run("gen-data --config " + cfg_path.string() + " --out " + data_dir.string(),
              &out) == 0);
  const auto sweep_dir = dir.path / "sweep";
  REQUIRE(run("ablate --sweep sharing --config " + cfg_path.string() + " --out " +
                  sweep_dir.string(),
              &out) == 0);
  CHECK(fs::exists(sweep_dir / "results.tsv"));
  CHECK(out.find("shared") != std::string::npos);
  CHECK(out.find("non_shared") != std::string::npos);

  CHECK(run("ablate --sweep bogus --config " + cfg_path.string() + " --out " +
                (dir.path / "s2").string(),
            &out) == 2);
}
