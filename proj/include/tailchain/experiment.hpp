#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tailchain/models.hpp"

namespace tailchain {

// One reproducible experiment: simulate, window, sample the tail chain, and
// compare. The seed is mandatory; every stage derives its randomness from it
// through the documented stream-splitting rule.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelFile model;
  long sim_n = 1000000;
  long burn_in = -1;  // -1: model default
  std::vector<double> thresholds = {99.0, 99.9};
  int s = 2;
  int t = 2;
  long bftc_paths = 20000;
  bool check_timechange = true;
  double level = 0.001;  // gated tests fail at p <= level; needs n_perm >= 1/level - 1
  int n_perm = 999;
  std::size_t max_points = 1500;
  std::string out_dir = "out";
};

// Validation returns one "pointer: message" line per problem (empty means
// valid). base_dir resolves a relative "model_file".
std::vector<std::string> validate_config_text(const std::string& text,
                                              const std::string& base_dir);
ExperimentConfig config_from_json_text(const std::string& text, const std::string& base_dir);

// File variants; relative model_file paths resolve against the config's
// directory. Throw IoError when the file cannot be read.
std::vector<std::string> validate_config(const std::string& path);
ExperimentConfig load_config(const std::string& path);

struct ExperimentReport {
  bool passed = true;                  // all gated checks passed
  std::vector<std::string> gate_lines; // "[PASS]/[FAIL] name: detail"
  std::vector<std::string> info_lines;
  std::vector<std::string> files;      // paths written, relative to out_dir
};

// Writes the trajectory, window CSVs, tail-chain samples, diagnostics JSON,
// and a human-readable summary (the only file with a timestamp) into
// config.out_dir. Identical config and seed produce byte-identical data files.
ExperimentReport run_experiment(const ExperimentConfig& config);

}  // namespace tailchain
