#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mtscan/train.hpp"

namespace mtscan {

enum class AblationKind { task_order, scan_scale, scan_number, uni_vs_bi, mode_order, components };

std::string to_string(AblationKind kind);
/// Throws UsageError for an unknown name.
AblationKind parse_ablation_kind(const std::string& name);

struct AblationArm {
  std::string name;
  ModelConfig config;
  bool random_order = false;
  /// The single-task reference row itself (components only).
  bool stl = false;
};

/// Runs fn(0..n-1) on up to `workers` threads; rethrows the first failure
/// (by index) after every job has finished.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Single-task config for task t: no cross-task block and plain SS2D scans.
ModelConfig stl_config(const ModelConfig& base, std::size_t task);
/// Shared encoder, per-task decoders, no interaction, plain SS2D scans.
ModelConfig mtl_config(const ModelConfig& base);

/// Arms of one ablation derived from `base`. When an arm cannot be built at
/// the base width (e.g. three scan branches over 32 channels) the base
/// channel count is raised to the smallest width every arm accepts.
std::vector<AblationArm> ablation_arms(AblationKind kind, const ModelConfig& base);

/// Smallest multiple of 8w, not below `at_least`, that every arm accepts as
/// an input size.
std::size_t smallest_valid_size(const std::vector<AblationArm>& arms, std::size_t at_least);

/// Per-task metrics of single-task models trained one per task.
MetricReport train_stl_reference(const ModelConfig& base, const Dataset& train_data, const Dataset& val_data,
                                 const TrainOptions& options, std::size_t workers = 1);

struct AblationRow {
  std::string arm;
  MetricReport report;  // averaged over seeds
  double delta_m = 0.0;
  double val_loss = 0.0;
  std::uint64_t flops = 0;
  std::size_t params = 0;
};

struct AblationTable {
  AblationKind kind = AblationKind::components;
  std::vector<std::string> tasks;
  std::vector<AblationRow> rows;
  std::vector<std::pair<std::string, double>> summary;

  /// arm,<task>_<metric>...,delta_m,val_loss,flops,params
  std::string csv() const;
  std::string summary_csv() const;
};

struct AblationOptions {
  TrainOptions train;
  std::vector<std::uint64_t> seeds{0};
  /// Training runs in flight at once. Runs are independent, so the table does
  /// not depend on this.
  std::size_t workers = 1;
};

/// Trains every arm once per seed and the single-task reference once (first
/// seed); each row holds seed-averaged metrics and gain.
AblationTable run_ablation(AblationKind kind, const ModelConfig& base, const Dataset& train_data,
                           const Dataset& val_data, const AblationOptions& options);

}  // namespace mtscan
