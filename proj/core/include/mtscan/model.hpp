#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtscan/bi_scan.hpp"
#include "mtscan/ms_scan.hpp"
#include "mtscan/ops.hpp"
#include "mtscan/ssm.hpp"

namespace mtscan {

enum class TaskKind { semseg, depth, normals, boundary };
enum class LossKind { l1, cross_entropy };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);
std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::semseg;
  std::size_t out_channels = 1;
  LossKind loss = LossKind::cross_entropy;
  double weight = 1.0;
  /// Per-class cross-entropy weights; empty means uniform.
  std::vector<double> class_weights;

  /// Output width and loss for a task kind: semseg K-way CE, depth 1-ch L1,
  /// normals 3-ch L1, boundary 2-way CE weighted 0.05 / 0.95 (edges are rare).
  static TaskSpec standard(TaskKind kind, std::size_t classes);
};

/// Semseg, depth, normals, boundary.
std::vector<TaskSpec> default_tasks(std::size_t classes);

/// How the shared block of each decoder stage mixes task features.
///   bi_scan     BI-Scan over all task maps (BIM)
///   fused_ss2d  one SS2D over a linear fusion of all task maps (baseline-style)
///   none        no cross-task block (plain MTL / STL)
enum class Interaction { bi_scan, fused_ss2d, none };

std::string to_string(Interaction mode);
Interaction parse_interaction(const std::string& name);

struct ModelConfig {
  std::vector<TaskSpec> tasks;
  std::size_t in_channels = 3;
  std::size_t channels = 16;  // C
  std::size_t partition = 4;  // w
  std::size_t state = 8;
  std::size_t head_channels = 96;  // Psi output width before the reshape
  std::array<std::vector<std::size_t>, 3> mfr_scales{{{1, 4}, {1, 4}, {1, 4}}};
  bool dilated = false;
  Interaction interaction = Interaction::bi_scan;
  /// Template for every stage's BI-Scan. When scale_patterns is set, pattern
  /// slot i takes the stage scale mfr_scales[stage][i % N].
  BiScanConfig bi_scan{BiScanConfig::default_patterns()};
  bool scale_patterns = true;
  /// Task visiting order of every cross-task scan; empty means declaration order.
  std::vector<std::size_t> task_order;

  std::size_t stage_channels(std::size_t stage) const { return channels << stage; }
  /// Concrete BI-Scan configuration of MFR stage 0..2.
  BiScanConfig bi_scan_for(std::size_t mfr_stage) const;
  /// Throws ConfigError on any inconsistent field.
  void validate() const;
  /// Throws ConfigError unless H and W are divisible by 8w and every scan
  /// scale divides its stage grid.
  void validate_input(std::size_t height, std::size_t width) const;
};

struct Linear {
  Tensor weight;  // out x in
  Tensor bias;    // out, may be undefined

  static Linear make(std::size_t in, std::size_t out, Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const { return channel_linear(x, weight, bias); }
  static std::size_t parameter_count(std::size_t in, std::size_t out, bool bias = true) {
    return in * out + (bias ? out : 0);
  }
};

struct Norm {
  Tensor gamma, beta;

  static Norm make(std::size_t channels);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

struct MixBlock {
  Norm norm;
  SS2DHeads heads;
};

struct EncoderParams {
  Linear embed;
  std::array<MixBlock, 4> mix;
  std::array<Linear, 3> merge;  // before stages 2..4
};

struct MsstPass {
  Norm norm;
  ScaleConfig scan;
  Linear gate;
  Linear proj;
};

struct MsstBlock {
  std::array<MsstPass, 2> passes;
};

struct BcfrBlock {
  std::vector<Norm> norms;    // per task
  std::vector<Linear> gates;  // per task
  BiScan bi;                  // Interaction::bi_scan
  Linear fuse;                // Interaction::fused_ss2d, (T C) -> C
  Norm fuse_norm;
  SS2DHeads fused_heads;
};

struct MfrStage {
  std::vector<Linear> up;  // per task, channel halving
  std::vector<MsstBlock> msst;
  BcfrBlock bcfr;
};

struct StageFeatures {
  std::array<Tensor, 4> g;
};

/// Learned weights plus the configuration that shaped them.
struct Model {
  ModelConfig config;
  EncoderParams encoder;
  std::array<MfrStage, 3> mfr;  // empty when there are no tasks
  Norm head_norm;               // shared, ahead of Psi
  Linear psi;                   // shared C -> D
  std::vector<Linear> task_proj;

  static Model init(const ModelConfig& config, std::uint64_t seed);
  /// Visits every learnable tensor with a stable dotted name.
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

StageFeatures encoder_forward(const Tensor& image, const Model& model);
Tensor msst_pass_forward(const Tensor& x, const MsstPass& pass);
Tensor msst_forward(const Tensor& x, const MsstBlock& block);
TaskFeatureSet bcfr_forward(const TaskFeatureSet& fs, const BcfrBlock& block, Interaction mode);
/// `stage` is 0..2; `prev` holds one map per task at half the skip resolution.
TaskFeatureSet mfr_forward(const TaskFeatureSet& prev, const Tensor& skip, const MfrStage& params,
                           const ModelConfig& config, std::size_t stage);
/// out_channels x H x W prediction for task t.
Tensor head_forward(const Tensor& feature, const Model& model, std::size_t task);
/// One prediction per task, in declaration order. `order` overrides the
/// configured task scan order for this call.
std::vector<Tensor> model_forward(const Tensor& image, const Model& model, const TaskOrder* order = nullptr);

std::size_t count_params(const ModelConfig& config);
std::uint64_t count_flops(const ModelConfig& config, std::size_t height, std::size_t width);

/// Writes named float64 blobs ("BIMCKPT1" container, little-endian).
void save_checkpoint(const std::string& path, const Model& model);
/// Loads blobs into a model built from the same configuration. Throws
/// FormatError on a bad container, a missing name or a shape mismatch.
void load_checkpoint(const std::string& path, Model& model);

}  // namespace mtscan
