#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtscan/ssm.hpp"

namespace mtscan {

/// Permutation over task indices giving the order in which tasks are laid
/// into a cross-task sequence.
struct TaskOrder {
  std::vector<std::size_t> perm;

  static TaskOrder identity(std::size_t tasks);
  TaskOrder reversed() const;
  std::size_t size() const { return perm.size(); }
  /// Throws PermutationError unless perm is a bijection on [0, tasks).
  void validate(std::size_t tasks) const;
  bool operator==(const TaskOrder&) const = default;
};

/// One feature map (d x H x W) per task, in task declaration order.
struct TaskFeatureSet {
  std::vector<Tensor> maps;
  TaskOrder order;

  std::size_t tasks() const { return maps.size(); }
};

enum class ScanMode { task_first, position_first };

/// A serialised cross-task sequence. `token_order[l]` is the id
/// (task * H*W + position) of the token at step l, so the producing index map
/// is always available for exact inversion.
struct ScanSequence {
  Tensor tokens;  // L x d
  std::vector<std::size_t> token_order;
  ScanMode mode = ScanMode::task_first;
  std::size_t tasks = 0, dim = 0, height = 0, width = 0;
};

/// Token visiting orders of both modes for T tasks on an H x W grid.
std::vector<std::size_t> task_first_token_order(std::size_t tasks, std::size_t height, std::size_t width,
                                                ScanDirection pattern, const TaskOrder& order);
std::vector<std::size_t> position_first_token_order(std::size_t tasks, std::size_t height, std::size_t width,
                                                    ScanDirection pattern, const TaskOrder& order);

/// Each task map serialised by the pattern, subsequences concatenated in task
/// order: length T * H * W.
ScanSequence task_first_serialize(const TaskFeatureSet& fs, ScanDirection pattern, const TaskOrder& order);
/// At each position (visited in pattern order) the T task tokens in task
/// order: length H * W * T.
ScanSequence position_first_serialize(const TaskFeatureSet& fs, ScanDirection pattern, const TaskOrder& order);

/// Exact inverse scatter back to per-task maps of shape dim x height x width.
/// Throws ProtocolError when the sequence carries no index map, ShapeError
/// when it does not match `target`.
TaskFeatureSet deserialize(const ScanSequence& seq, const Shape& target);
TaskFeatureSet deserialize(const ScanSequence& seq);

enum class ModeOrder { tf_then_pf, pf_then_tf, tf_only, pf_only };

std::string to_string(ModeOrder order);
ModeOrder parse_mode_order(const std::string& name);
/// Active modes in execution order.
std::vector<ScanMode> mode_sequence(ModeOrder order);

/// A scan direction, optionally preceded by window tokenisation at `scale`.
struct ScanPattern {
  ScanDirection direction = ScanDirection::row_fwd;
  std::size_t scale = 1;
};

struct BiScanConfig {
  std::vector<ScanPattern> patterns;
  ModeOrder mode_order = ModeOrder::tf_then_pf;
  bool bidirectional = true;
  /// Patterns with scale > 1 use dilated sampling + bilinear restore rather
  /// than window stacking.
  bool dilated = false;

  /// The four SS2D directions. With `scales`, direction slot i uses
  /// scales[i % scales.size()].
  static std::vector<ScanPattern> default_patterns(std::span<const std::size_t> scales = {});
  std::size_t half_width(std::size_t channels) const { return bidirectional ? channels / 2 : channels; }
  std::size_t head_width(std::size_t channels, const ScanPattern& p) const;
};

/// BI-Scan block: configuration plus SSM heads indexed [half][pattern][mode].
/// Heads are shared by all tasks; only active modes own heads.
struct BiScan {
  BiScanConfig config;
  std::size_t channels = 0;
  std::vector<std::vector<std::vector<SSMParams>>> heads;

  static BiScan make(const BiScanConfig& config, std::size_t channels, std::size_t state, Rng& rng);
  std::vector<Tensor> parameters() const;
  static std::size_t parameter_count(const BiScanConfig& config, std::size_t channels, std::size_t state);
};

/// Forward Scan machinery over one channel half, using `heads` ([pattern][mode]).
/// Pattern outputs are summed elementwise.
TaskFeatureSet forward_scan(const TaskFeatureSet& fs, const BiScanConfig& config,
                            const std::vector<std::vector<SSMParams>>& heads);

/// Full BI-Scan. With bidirectional on, the first channel half goes through the
/// Forward Scan and the second half through the Backward Scan (task list
/// reversed, same machinery, reversed back); halves are re-concatenated.
/// Throws ConfigError for odd C when bidirectional.
TaskFeatureSet bi_scan(const TaskFeatureSet& fs, const BiScan& block);

/// Analytic FLOPs of bi_scan for T tasks of C x H x W; affine in T.
std::uint64_t flop_count(const BiScanConfig& config, std::size_t tasks, std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t state);

}  // namespace mtscan
