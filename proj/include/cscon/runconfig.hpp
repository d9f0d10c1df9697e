#pragma once

// Key=value configuration files with [section] headers, profile presets,
// flag overrides, and the resolved-config echo written into every run
// directory. The echo parses back through the same reader, so a run is
// reproducible from its echo alone.

#include <filesystem>
#include <map>
#include <string>

#include "cscon/model.hpp"
#include "cscon/synthdata.hpp"
#include "cscon/training.hpp"

namespace cscon {

struct RunConfig {
  std::string profile = "desk";
  ModelConfig model = ModelConfig::desk();
  TrainConfig train = TrainConfig::desk();
  DatasetConfig dataset;
  ProbeOptions probe;
  std::string data_dir;  // directory containing manifest.tsv

  void validate() const;
};

// Applies "desk" or "paper" presets to model + train.
void apply_profile(RunConfig& cfg, const std::string& profile);

// Parses a config file over the given base; unknown sections or keys fail
// with a ConfigError naming the offender.
RunConfig parse_run_config(const std::filesystem::path& path, RunConfig base = {});

// Sets a single "section.key" (as in the file format) on the config.
void set_config_field(RunConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value);

std::string render_run_config(const RunConfig& cfg);
void write_config_echo(const RunConfig& cfg, const std::filesystem::path& out_dir);

inline constexpr const char* kEchoFilename = "config_echo.ini";

}  // namespace cscon
