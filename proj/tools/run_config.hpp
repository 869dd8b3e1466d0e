#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtscan/ablation.hpp"
#include "mtscan/data.hpp"
#include "mtscan/model.hpp"
#include "mtscan/train.hpp"

namespace mtscan::cli {

/// Everything one run needs. Every field has a default; the defaults are the
/// desk-scale BIM setup ({1,4} scales, TF then PF, bidirectional, 4 patterns).
struct RunConfig {
  ModelConfig model;
  Manifest train_data;
  Manifest val_data;
  TrainOptions train;
  std::vector<std::uint64_t> ablation_seeds{0};

  RunConfig();
};

/// Parses JSON text. Unknown keys and type mismatches raise ConfigError with
/// the offending line number.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON of a configuration (all fields spelled out).
std::string dump_run_config(const RunConfig& cfg);

}  // namespace mtscan::cli
