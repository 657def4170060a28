#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unimixer/model.hpp"
#include "unimixer/synthetic.hpp"
#include "unimixer/training.hpp"

namespace unimixer {

struct SweepPoint {
  std::string label;
  ModelConfig model;
};

struct SweepConfig {
  std::vector<SweepPoint> grid;
  std::vector<std::uint64_t> seeds{1};
  double baseline_auc = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 1;  // model init and batch order
  SyntheticSpec data;
  std::size_t embed_dim = 8;
  ModelConfig model;
  TrainConfig training;
  SweepConfig sweep;

  void validate() const;
};

// Defaults used for any key a config file leaves out.
RunConfig default_run_config();

// YAML text; unknown keys and malformed values throw ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string emit_run_config(const RunConfig& cfg);

// The model record stored in checkpoint headers.
std::string emit_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

}  // namespace unimixer
