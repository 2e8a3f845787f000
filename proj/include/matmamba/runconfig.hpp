#pragma once

#include <string>

#include "matmamba/train.hpp"

namespace matmamba {

// Run description: model + training hyperparameters + data locations, stored
// as strict JSON (unknown keys rejected, defaults materialized on load).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_path;
  std::string out_dir = "out";
};

RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& rc);

}  // namespace matmamba
