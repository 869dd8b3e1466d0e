#include "mtscan/bi_scan.hpp"

#include <algorithm>
#include <numeric>

#include "mtscan/complexity.hpp"
#include "mtscan/error.hpp"
#include "mtscan/ms_scan.hpp"
#include "mtscan/ops.hpp"

namespace mtscan {

TaskOrder TaskOrder::identity(std::size_t tasks) {
  TaskOrder o;
  o.perm.resize(tasks);
  std::iota(o.perm.begin(), o.perm.end(), std::size_t{0});
  return o;
}

TaskOrder TaskOrder::reversed() const {
  TaskOrder o{perm};
  std::reverse(o.perm.begin(), o.perm.end());
  return o;
}

void TaskOrder::validate(std::size_t tasks) const {
  if (perm.size() != tasks || !is_permutation(perm))
    throw PermutationError("task order is not a permutation of " + std::to_string(tasks) + " tasks");
}

std::vector<std::size_t> task_first_token_order(std::size_t tasks, std::size_t height, std::size_t width,
                                                ScanDirection pattern, const TaskOrder& order) {
  order.validate(tasks);
  const auto spatial = direction_indices(pattern, height, width);
  const std::size_t hw = spatial.size();
  std::vector<std::size_t> out;
  out.reserve(tasks * hw);
  for (std::size_t t : order.perm)
    for (std::size_t p : spatial) out.push_back(t * hw + p);
  return out;
}

std::vector<std::size_t> position_first_token_order(std::size_t tasks, std::size_t height, std::size_t width,
                                                    ScanDirection pattern, const TaskOrder& order) {
  order.validate(tasks);
  const auto spatial = direction_indices(pattern, height, width);
  const std::size_t hw = spatial.size();
  std::vector<std::size_t> out;
  out.reserve(tasks * hw);
  for (std::size_t p : spatial)
    for (std::size_t t : order.perm) out.push_back(t * hw + p);
  return out;
}

namespace {

Shape common_shape(const TaskFeatureSet& fs) {
  if (fs.maps.empty()) throw ShapeError("task feature set is empty");
  const Shape& s = fs.maps.front().shape();
  if (s.size() != 3) throw ShapeError("task maps must be d x H x W, got " + shape_str(s));
  for (const auto& m : fs.maps)
    if (m.shape() != s)
      throw ShapeError("task maps disagree in shape: " + shape_str(s) + " vs " + shape_str(m.shape()));
  return s;
}

Tensor stack_tasks(const std::vector<Tensor>& maps) { return maps.size() == 1 ? maps[0] : concat(maps); }

ScanSequence serialize_impl(const TaskFeatureSet& fs, std::vector<std::size_t> token_order, ScanMode mode) {
  const Shape s = common_shape(fs);
  const std::size_t tasks = fs.maps.size(), d = s[0], h = s[1], w = s[2], hw = h * w;
  std::vector<std::size_t> idx(token_order.size() * d);
  for (std::size_t l = 0; l < token_order.size(); ++l) {
    const std::size_t t = token_order[l] / hw, p = token_order[l] % hw;
    for (std::size_t c = 0; c < d; ++c) idx[l * d + c] = (t * d + c) * hw + p;
  }
  ScanSequence seq;
  seq.tokens = gather_permute(stack_tasks(fs.maps), idx, {token_order.size(), d});
  seq.token_order = std::move(token_order);
  seq.mode = mode;
  seq.tasks = tasks;
  seq.dim = d;
  seq.height = h;
  seq.width = w;
  return seq;
}

}  // namespace

ScanSequence task_first_serialize(const TaskFeatureSet& fs, ScanDirection pattern, const TaskOrder& order) {
  const Shape s = common_shape(fs);
  return serialize_impl(fs, task_first_token_order(fs.maps.size(), s[1], s[2], pattern, order), ScanMode::task_first);
}

ScanSequence position_first_serialize(const TaskFeatureSet& fs, ScanDirection pattern, const TaskOrder& order) {
  const Shape s = common_shape(fs);
  return serialize_impl(fs, position_first_token_order(fs.maps.size(), s[1], s[2], pattern, order),
                        ScanMode::position_first);
}

TaskFeatureSet deserialize(const ScanSequence& seq, const Shape& target) {
  if (seq.token_order.empty()) throw ProtocolError("scan sequence carries no index permutation");
  if (target.size() != 3 || target[0] != seq.dim || target[1] != seq.height || target[2] != seq.width)
    throw ShapeError("deserialize target " + shape_str(target) + " does not match the sequence");
  const std::size_t tasks = seq.tasks, d = seq.dim, hw = seq.height * seq.width;
  if (seq.token_order.size() != tasks * hw || !is_permutation(seq.token_order))
    throw PermutationError("sequence index map is not a bijection on task tokens");
  if (!seq.tokens.defined() || seq.tokens.rank() != 2 || seq.tokens.dim(0) != tasks * hw || seq.tokens.dim(1) != d)
    throw ShapeError("sequence tokens do not match its index map");
  std::vector<std::size_t> inv(tasks * d * hw);
  for (std::size_t l = 0; l < seq.token_order.size(); ++l) {
    const std::size_t t = seq.token_order[l] / hw, p = seq.token_order[l] % hw;
    for (std::size_t c = 0; c < d; ++c) inv[(t * d + c) * hw + p] = l * d + c;
  }
  const Tensor stacked = gather_permute(seq.tokens, inv, {tasks * d, seq.height, seq.width});
  TaskFeatureSet out;
  out.maps = tasks == 1 ? std::vector<Tensor>{stacked} : channel_split(stacked, tasks);
  out.order = TaskOrder::identity(tasks);
  return out;
}

TaskFeatureSet deserialize(const ScanSequence& seq) { return deserialize(seq, {seq.dim, seq.height, seq.width}); }

std::string to_string(ModeOrder order) {
  switch (order) {
    case ModeOrder::tf_then_pf: return "tf_then_pf";
    case ModeOrder::pf_then_tf: return "pf_then_tf";
    case ModeOrder::tf_only: return "tf_only";
    case ModeOrder::pf_only: return "pf_only";
  }
  return "?";
}

ModeOrder parse_mode_order(const std::string& name) {
  for (auto m : {ModeOrder::tf_then_pf, ModeOrder::pf_then_tf, ModeOrder::tf_only, ModeOrder::pf_only})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown mode order '" + name + "'");
}

std::vector<ScanMode> mode_sequence(ModeOrder order) {
  switch (order) {
    case ModeOrder::tf_then_pf: return {ScanMode::task_first, ScanMode::position_first};
    case ModeOrder::pf_then_tf: return {ScanMode::position_first, ScanMode::task_first};
    case ModeOrder::tf_only: return {ScanMode::task_first};
    case ModeOrder::pf_only: return {ScanMode::position_first};
  }
  return {};
}

std::vector<ScanPattern> BiScanConfig::default_patterns(std::span<const std::size_t> scales) {
  std::vector<ScanPattern> out;
  for (std::size_t i = 0; i < kAllDirections.size(); ++i)
    out.push_back({kAllDirections[i], scales.empty() ? std::size_t{1} : scales[i % scales.size()]});
  return out;
}

std::size_t BiScanConfig::head_width(std::size_t channels, const ScanPattern& p) const {
  const std::size_t half = half_width(channels);
  return dilated ? half : half * p.scale * p.scale;
}

BiScan BiScan::make(const BiScanConfig& config, std::size_t channels, std::size_t state, Rng& rng) {
  if (config.patterns.empty()) throw ConfigError("BI-Scan needs at least one scan pattern");
  if (config.bidirectional && channels % 2 != 0)
    throw ConfigError("bidirectional BI-Scan needs an even channel count, got " + std::to_string(channels));
  BiScan block;
  block.config = config;
  block.channels = channels;
  const std::size_t halves = config.bidirectional ? 2 : 1;
  const std::size_t modes = mode_sequence(config.mode_order).size();
  block.heads.resize(halves);
  for (auto& half : block.heads)
    for (const auto& p : config.patterns) {
      std::vector<SSMParams> per_mode;
      for (std::size_t m = 0; m < modes; ++m) per_mode.push_back(SSMParams::init(config.head_width(channels, p), state, rng));
      half.push_back(std::move(per_mode));
    }
  return block;
}

std::vector<Tensor> BiScan::parameters() const {
  std::vector<Tensor> out;
  for (const auto& half : heads)
    for (const auto& pattern : half)
      for (const auto& h : pattern)
        for (auto& t : h.tensors()) out.push_back(t);
  return out;
}

std::size_t BiScan::parameter_count(const BiScanConfig& config, std::size_t channels, std::size_t state) {
  const std::size_t halves = config.bidirectional ? 2 : 1;
  const std::size_t modes = mode_sequence(config.mode_order).size();
  std::size_t total = 0;
  for (const auto& p : config.patterns) total += modes * SSMParams::parameter_count(config.head_width(channels, p), state);
  return halves * total;
}

TaskFeatureSet forward_scan(const TaskFeatureSet& fs, const BiScanConfig& config,
                            const std::vector<std::vector<SSMParams>>& heads) {
  const Shape s = common_shape(fs);
  const std::size_t tasks = fs.maps.size(), h = s[1], w = s[2];
  fs.order.validate(tasks);
  if (heads.size() != config.patterns.size()) throw ConfigError("one head set per scan pattern is required");
  const auto modes = mode_sequence(config.mode_order);

  std::vector<Tensor> total(tasks);
  for (std::size_t pi = 0; pi < config.patterns.size(); ++pi) {
    const ScanPattern& pattern = config.patterns[pi];
    const std::size_t sc = pattern.scale;
    TaskFeatureSet cur;
    cur.order = fs.order;
    for (const auto& m : fs.maps) {
      if (sc == 1)
        cur.maps.push_back(m);
      else
        cur.maps.push_back(config.dilated ? dilated_sample(m, sc) : window_tokenize(m, sc));
    }
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      ScanSequence seq = modes[mi] == ScanMode::task_first
                             ? task_first_serialize(cur, pattern.direction, cur.order)
                             : position_first_serialize(cur, pattern.direction, cur.order);
      seq.tokens = selective_scan(seq.tokens, heads[pi].at(mi));
      auto restored = deserialize(seq);
      cur.maps = std::move(restored.maps);
    }
    for (std::size_t t = 0; t < tasks; ++t) {
      Tensor out = cur.maps[t];
      if (sc != 1) out = config.dilated ? bilinear_restore(out, sc, h, w) : window_untokenize(out, sc);
      total[t] = total[t].defined() ? add(total[t], out) : out;
    }
  }
  return TaskFeatureSet{std::move(total), fs.order};
}

TaskFeatureSet bi_scan(const TaskFeatureSet& fs, const BiScan& block) {
  const Shape s = common_shape(fs);
  if (s[0] != block.channels)
    throw ShapeError("BI-Scan block built for " + std::to_string(block.channels) + " channels, got " +
                     std::to_string(s[0]));
  const std::size_t tasks = fs.maps.size();
  fs.order.validate(tasks);
  if (!block.config.bidirectional) return forward_scan(fs, block.config, block.heads.at(0));
  if (s[0] % 2 != 0) throw ConfigError("bidirectional BI-Scan needs an even channel count");

  const std::size_t half = s[0] / 2;
  // The backward half visits tasks in exactly the reverse of the forward
  // order; on the reversed list that is perm'[i] = T-1-perm[T-1-i].
  TaskOrder bwd_order = fs.order;
  for (std::size_t i = 0; i < tasks; ++i) bwd_order.perm[i] = tasks - 1 - fs.order.perm[tasks - 1 - i];
  TaskFeatureSet fwd_in{{}, fs.order}, bwd_in{{}, bwd_order};
  for (const auto& m : fs.maps) {
    fwd_in.maps.push_back(slice(m, 0, half));
    bwd_in.maps.push_back(slice(m, half, s[0]));
  }
  std::reverse(bwd_in.maps.begin(), bwd_in.maps.end());
  const auto fwd = forward_scan(fwd_in, block.config, block.heads.at(0));
  auto bwd = forward_scan(bwd_in, block.config, block.heads.at(1));
  std::reverse(bwd.maps.begin(), bwd.maps.end());

  TaskFeatureSet out{{}, fs.order};
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::vector<Tensor> parts{fwd.maps[t], bwd.maps[t]};
    out.maps.push_back(concat(parts));
  }
  return out;
}

std::uint64_t flop_count(const BiScanConfig& config, std::size_t tasks, std::size_t channels, std::size_t height,
                         std::size_t width, std::size_t state) {
  const std::uint64_t halves = config.bidirectional ? 2 : 1;
  const std::uint64_t half = config.half_width(channels);
  const std::uint64_t hw = static_cast<std::uint64_t>(height) * width;
  const std::uint64_t modes = mode_sequence(config.mode_order).size();
  std::uint64_t per_half = 0;
  for (const auto& p : config.patterns) {
    const std::uint64_t s2 = static_cast<std::uint64_t>(p.scale) * p.scale;
    const std::uint64_t cells = hw / s2;
    const std::uint64_t width_tok = config.head_width(channels, p);
    per_half += modes * flops::selective_scan(tasks * cells, width_tok, state);
    if (config.dilated && p.scale > 1) per_half += tasks * flops::bilinear_restore(half, height, width);
  }
  per_half += (config.patterns.size() - 1) * tasks * flops::elementwise(half * hw);
  return halves * per_half;
}

}  // namespace mtscan
