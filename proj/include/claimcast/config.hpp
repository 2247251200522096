#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "claimcast/embedding.hpp"
#include "claimcast/metrics.hpp"
#include "claimcast/predictor.hpp"
#include "claimcast/synth.hpp"

// Run configuration shared by every command.
//
// File format: one `key = value` per line, `#` starts a comment, blank lines
// are ignored. Lists are comma-separated. Unknown keys are errors. The same
// keys can be overridden on the command line with `--set key=value`.
namespace claimcast {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  // paths; empty means "the default location under out_dir"
  std::filesystem::path out_dir = "claimcast-out";
  std::filesystem::path medical;
  std::filesystem::path pharmacy;
  std::filesystem::path labels;
  std::filesystem::path condition_map;
  std::filesystem::path embedding_dir;
  std::filesystem::path model;

  int observation_year = 2022;
  int result_year = 2023;
  std::uint64_t seed = 1;
  bool serial = false;

  SynthConfig synth;
  PvDbowOptions pvdbow;
  ModelConfig model_config;
  SplitPlan split;
  std::size_t shuffle = 0;  // which shuffle `train` and `evaluate` use
  GroupBy group_by = GroupBy::entropy_quintile;

  // Sets one key from its text form. Throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  // Resolved configuration, one `key = value` line per known key, sorted.
  std::map<std::string, std::string> snapshot() const;
  std::string to_text() const;
  // Dimensions positive, fractions and the severity mix summing to 1, years
  // consecutive. Throws ConfigError naming the offending key.
  void validate() const;

  // Copies the global seed and the serial flag into the module configs.
  void propagate_seed();

  std::filesystem::path data_dir() const { return out_dir / "data"; }
  std::filesystem::path medical_path() const;
  std::filesystem::path pharmacy_path() const;
  std::filesystem::path labels_path() const;
  std::filesystem::path condition_map_path() const;
  std::filesystem::path embeddings_path() const;
  std::filesystem::path model_path() const;
};

std::vector<std::string> config_keys();

// Reads a config file on top of `base`.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace claimcast
