#include "mtscan/model.hpp"

#include <cmath>
#include <string>

#include "mtscan/complexity.hpp"
#include "mtscan/error.hpp"
#include "mtscan/random.hpp"

namespace mtscan {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::semseg: return "semseg";
    case TaskKind::depth: return "depth";
    case TaskKind::normals: return "normals";
    case TaskKind::boundary: return "boundary";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  for (auto k : {TaskKind::semseg, TaskKind::depth, TaskKind::normals, TaskKind::boundary})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown task kind '" + name + "'");
}

std::string to_string(LossKind kind) { return kind == LossKind::l1 ? "l1" : "cross_entropy"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "l1") return LossKind::l1;
  if (name == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss kind '" + name + "'");
}

TaskSpec TaskSpec::standard(TaskKind kind, std::size_t classes) {
  switch (kind) {
    case TaskKind::semseg: return {"semseg", kind, classes, LossKind::cross_entropy, 1.0, {}};
    case TaskKind::depth: return {"depth", kind, 1, LossKind::l1, 1.0, {}};
    case TaskKind::normals: return {"normals", kind, 3, LossKind::l1, 1.0, {}};
    case TaskKind::boundary: return {"boundary", kind, 2, LossKind::cross_entropy, 1.0, {0.05, 0.95}};
  }
  throw ConfigError("unknown task kind");
}

std::vector<TaskSpec> default_tasks(std::size_t classes) {
  return {TaskSpec::standard(TaskKind::semseg, classes), TaskSpec::standard(TaskKind::depth, classes),
          TaskSpec::standard(TaskKind::normals, classes), TaskSpec::standard(TaskKind::boundary, classes)};
}

std::string to_string(Interaction mode) {
  switch (mode) {
    case Interaction::bi_scan: return "bi_scan";
    case Interaction::fused_ss2d: return "fused_ss2d";
    case Interaction::none: return "none";
  }
  return "?";
}

Interaction parse_interaction(const std::string& name) {
  for (auto m : {Interaction::bi_scan, Interaction::fused_ss2d, Interaction::none})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown interaction '" + name + "'");
}

BiScanConfig ModelConfig::bi_scan_for(std::size_t mfr_stage) const {
  BiScanConfig cfg = bi_scan;
  cfg.dilated = dilated;
  const auto& scales = mfr_scales.at(mfr_stage);
  for (std::size_t i = 0; i < cfg.patterns.size(); ++i)
    cfg.patterns[i].scale = scale_patterns && !scales.empty() ? scales[i % scales.size()] : 1;
  return cfg;
}

void ModelConfig::validate() const {
  if (channels == 0 || in_channels == 0 || state == 0) throw ConfigError("channels and state size must be positive");
  if (partition == 0) throw ConfigError("partition size must be positive");
  if (head_channels == 0 || head_channels % (partition * partition) != 0)
    throw ConfigError("head channels " + std::to_string(head_channels) + " must be a positive multiple of w^2 = " +
                      std::to_string(partition * partition));
  for (const auto& t : tasks) {
    if (t.out_channels == 0) throw ConfigError("task '" + t.name + "' needs at least one output channel");
    if (!(t.weight > 0.0) || !std::isfinite(t.weight)) throw ConfigError("task '" + t.name + "' needs a weight > 0");
    if (t.loss == LossKind::cross_entropy && t.out_channels < 2)
      throw ConfigError("cross-entropy task '" + t.name + "' needs at least two classes");
    if (!t.class_weights.empty()) {
      if (t.loss != LossKind::cross_entropy || t.class_weights.size() != t.out_channels)
        throw ConfigError("task '" + t.name + "' needs one class weight per output channel");
      for (double w : t.class_weights)
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("task '" + t.name + "' has a negative class weight");
    }
  }
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& scales = mfr_scales[s];
    const std::size_t c = stage_channels(2 - s);
    if (scales.empty()) throw ConfigError("MFR " + std::to_string(s + 1) + " has no scan scales");
    for (auto sc : scales)
      if (sc == 0) throw ConfigError("scan scales must be positive");
    if (c % scales.size() != 0)
      throw ConfigError("MFR " + std::to_string(s + 1) + " width " + std::to_string(c) + " not divisible by " +
                        std::to_string(scales.size()) + " scan branches");
  }
  if (!task_order.empty()) TaskOrder{task_order}.validate(tasks.size());
  if (interaction == Interaction::bi_scan) {
    if (bi_scan.patterns.empty()) throw ConfigError("BI-Scan needs at least one scan pattern");
    if (bi_scan.bidirectional && channels % 2 != 0)
      throw ConfigError("bidirectional BI-Scan needs an even base channel count");
  }
}

void ModelConfig::validate_input(std::size_t height, std::size_t width) const {
  validate();
  const std::size_t unit = 8 * partition;
  if (height == 0 || width == 0 || height % unit != 0 || width % unit != 0)
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by " +
                      std::to_string(unit));
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t stride = partition << (2 - s);
    const std::size_t h = height / stride, w = width / stride;
    std::vector<std::size_t> used = mfr_scales[s];
    if (interaction == Interaction::bi_scan)
      for (const auto& p : bi_scan_for(s).patterns) used.push_back(p.scale);
    for (auto sc : used)
      if (h % sc != 0 || w % sc != 0)
        throw ConfigError("scan scale " + std::to_string(sc) + " does not divide the MFR " + std::to_string(s + 1) +
                          " grid " + std::to_string(h) + "x" + std::to_string(w));
  }
}

Linear Linear::make(std::size_t in, std::size_t out, Rng& rng, bool bias) {
  Linear l;
  l.weight = normal_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
  if (bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

Norm Norm::make(std::size_t channels) { return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true)}; }

namespace {

constexpr const char* kSsmNames[] = {"a_log", "d_skip", "w_b", "w_c", "w_delta", "delta_up", "delta_bias"};

using Visitor = std::function<void(const std::string&, const Tensor&)>;

void visit_linear(const std::string& p, const Linear& l, const Visitor& fn) {
  fn(p + ".weight", l.weight);
  if (l.bias.defined()) fn(p + ".bias", l.bias);
}

void visit_norm(const std::string& p, const Norm& n, const Visitor& fn) {
  fn(p + ".gamma", n.gamma);
  fn(p + ".beta", n.beta);
}

void visit_ssm(const std::string& p, const SSMParams& h, const Visitor& fn) {
  const auto ts = h.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) fn(p + "." + kSsmNames[i], ts[i]);
}

void visit_ss2d(const std::string& p, const SS2DHeads& heads, const Visitor& fn) {
  for (std::size_t d = 0; d < heads.size(); ++d) visit_ssm(p + "." + to_string(kAllDirections[d]), heads[d], fn);
}

}  // namespace

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, 0x6d6f64656cULL);
  Model m;
  m.config = config;
  const std::size_t c = config.channels, w = config.partition, n = config.state;
  m.encoder.embed = Linear::make(config.in_channels * w * w, c, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t ci = config.stage_channels(i);
    if (i > 0) m.encoder.merge[i - 1] = Linear::make(4 * config.stage_channels(i - 1), ci, rng);
    m.encoder.mix[i] = {Norm::make(ci), init_ss2d_heads(ci, n, rng)};
  }
  const std::size_t tasks = config.tasks.size();
  if (tasks == 0) return m;

  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t cs = config.stage_channels(2 - s);
    MfrStage& st = m.mfr[s];
    for (std::size_t t = 0; t < tasks; ++t) {
      st.up.push_back(Linear::make(2 * cs, cs, rng));
      MsstBlock block;
      for (auto& pass : block.passes) {
        pass.norm = Norm::make(cs);
        pass.scan = ScaleConfig::make(cs, config.mfr_scales[s], n, config.dilated, rng);
        pass.gate = Linear::make(cs, cs, rng);
        pass.proj = Linear::make(cs, cs, rng);
      }
      st.msst.push_back(std::move(block));
    }
    if (config.interaction == Interaction::none) continue;
    for (std::size_t t = 0; t < tasks; ++t) {
      st.bcfr.norms.push_back(Norm::make(cs));
      st.bcfr.gates.push_back(Linear::make(cs, cs, rng));
    }
    if (config.interaction == Interaction::bi_scan) {
      st.bcfr.bi = BiScan::make(config.bi_scan_for(s), cs, n, rng);
    } else {
      st.bcfr.fuse = Linear::make(tasks * cs, cs, rng);
      st.bcfr.fuse_norm = Norm::make(cs);
      st.bcfr.fused_heads = init_ss2d_heads(cs, n, rng);
    }
  }
  m.head_norm = Norm::make(c);
  m.psi = Linear::make(c, config.head_channels, rng);
  const std::size_t fine = config.head_channels / (w * w);
  for (const auto& t : config.tasks) m.task_proj.push_back(Linear::make(fine, t.out_channels, rng));
  return m;
}

void Model::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_linear("encoder.embed", encoder.embed, fn);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = "encoder.stage" + std::to_string(i + 1);
    if (i > 0) visit_linear(p + ".merge", encoder.merge[i - 1], fn);
    visit_norm(p + ".norm", encoder.mix[i].norm, fn);
    visit_ss2d(p + ".ss2d", encoder.mix[i].heads, fn);
  }
  if (config.tasks.empty()) return;
  for (std::size_t s = 0; s < 3; ++s) {
    const MfrStage& st = mfr[s];
    const std::string p = "mfr" + std::to_string(s + 1);
    for (std::size_t t = 0; t < config.tasks.size(); ++t) {
      const std::string pt = p + ".task" + std::to_string(t);
      visit_linear(pt + ".up", st.up[t], fn);
      for (std::size_t k = 0; k < 2; ++k) {
        const MsstPass& pass = st.msst[t].passes[k];
        const std::string pp = pt + ".msst" + std::to_string(k);
        visit_norm(pp + ".norm", pass.norm, fn);
        for (std::size_t b = 0; b < pass.scan.branches.size(); ++b)
          visit_ss2d(pp + ".scan" + std::to_string(b), pass.scan.branches[b], fn);
        visit_linear(pp + ".gate", pass.gate, fn);
        visit_linear(pp + ".proj", pass.proj, fn);
      }
    }
    if (config.interaction == Interaction::none) continue;
    for (std::size_t t = 0; t < config.tasks.size(); ++t) {
      const std::string pt = p + ".bcfr.task" + std::to_string(t);
      visit_norm(pt + ".norm", st.bcfr.norms[t], fn);
      visit_linear(pt + ".gate", st.bcfr.gates[t], fn);
    }
    if (config.interaction == Interaction::bi_scan) {
      const auto& heads = st.bcfr.bi.heads;
      for (std::size_t h = 0; h < heads.size(); ++h)
        for (std::size_t q = 0; q < heads[h].size(); ++q)
          for (std::size_t md = 0; md < heads[h][q].size(); ++md)
            visit_ssm(p + ".bcfr.bi.half" + std::to_string(h) + ".pattern" + std::to_string(q) + ".mode" +
                          std::to_string(md),
                      heads[h][q][md], fn);
    } else {
      visit_linear(p + ".bcfr.fuse", st.bcfr.fuse, fn);
      visit_norm(p + ".bcfr.fuse_norm", st.bcfr.fuse_norm, fn);
      visit_ss2d(p + ".bcfr.ss2d", st.bcfr.fused_heads, fn);
    }
  }
  visit_norm("head.norm", head_norm, fn);
  visit_linear("head.psi", psi, fn);
  for (std::size_t t = 0; t < task_proj.size(); ++t) visit_linear("head.task" + std::to_string(t), task_proj[t], fn);
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  visit([&](const std::string&, const Tensor& t) { total += t.numel(); });
  return total;
}

StageFeatures encoder_forward(const Tensor& image, const Model& model) {
  const ModelConfig& cfg = model.config;
  if (image.rank() != 3 || image.dim(0) != cfg.in_channels)
    throw ShapeError("encoder expects a " + std::to_string(cfg.in_channels) + " x H x W image, got " +
                     shape_str(image.shape()));
  const std::size_t unit = 8 * cfg.partition;
  if (image.dim(1) % unit != 0 || image.dim(2) % unit != 0)
    throw ConfigError("image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                      " not divisible by " + std::to_string(unit));
  StageFeatures out;
  Tensor x = model.encoder.embed(window_tokenize(image, cfg.partition));
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) x = model.encoder.merge[i - 1](window_tokenize(x, 2));
    const MixBlock& mix = model.encoder.mix[i];
    x = add(x, ss2d(mix.norm(x), mix.heads));
    out.g[i] = x;
  }
  return out;
}

Tensor msst_pass_forward(const Tensor& x, const MsstPass& pass) {
  const Tensor xn = pass.norm(x);
  const Tensor g = silu(pass.gate(xn));
  return add(x, pass.proj(mul(multi_scale_scan(xn, pass.scan), g)));
}

Tensor msst_forward(const Tensor& x, const MsstBlock& block) {
  Tensor y = x;
  for (const auto& pass : block.passes) y = msst_pass_forward(y, pass);
  return y;
}

TaskFeatureSet bcfr_forward(const TaskFeatureSet& fs, const BcfrBlock& block, Interaction mode) {
  const std::size_t tasks = fs.maps.size();
  if (tasks == 0) throw ShapeError("BCFR needs at least one task");
  if (mode == Interaction::none) return fs;
  if (block.norms.size() != tasks || block.gates.size() != tasks)
    throw ShapeError("BCFR built for " + std::to_string(block.norms.size()) + " tasks, got " + std::to_string(tasks));
  TaskFeatureSet normed{{}, fs.order};
  std::vector<Tensor> gates;
  for (std::size_t t = 0; t < tasks; ++t) {
    if (fs.maps[t].shape() != fs.maps[0].shape()) throw ShapeError("BCFR task maps disagree in shape");
    normed.maps.push_back(block.norms[t](fs.maps[t]));
    gates.push_back(sigmoid(block.gates[t](normed.maps[t])));
  }
  std::vector<Tensor> shared;
  if (mode == Interaction::bi_scan) {
    shared = bi_scan(normed, block.bi).maps;
  } else {
    const Tensor fused = block.fuse(tasks == 1 ? normed.maps[0] : concat(normed.maps));
    shared.assign(tasks, ss2d(block.fuse_norm(fused), block.fused_heads));
  }
  TaskFeatureSet out{{}, fs.order};
  for (std::size_t t = 0; t < tasks; ++t) {
    const Tensor keep = affine(gates[t], -1.0, 1.0);
    out.maps.push_back(add(fs.maps[t], add(mul(gates[t], shared[t]), mul(keep, normed.maps[t]))));
  }
  return out;
}

TaskFeatureSet mfr_forward(const TaskFeatureSet& prev, const Tensor& skip, const MfrStage& params,
                           const ModelConfig& config, std::size_t stage) {
  if (stage > 2) throw ConfigError("MFR stage index must be 0..2");
  const std::size_t tasks = prev.maps.size();
  if (tasks != params.up.size()) throw ShapeError("MFR stage built for a different task count");
  if (skip.rank() != 3) throw ShapeError("encoder skip must be C x H x W");
  TaskFeatureSet refined{{}, prev.order};
  for (std::size_t t = 0; t < tasks; ++t) {
    const Tensor& x = prev.maps[t];
    if (x.rank() != 3 || x.dim(0) != 2 * skip.dim(0) || 2 * x.dim(1) != skip.dim(1) || 2 * x.dim(2) != skip.dim(2))
      throw ShapeError("MFR input " + shape_str(x.shape()) + " does not pair with skip " + shape_str(skip.shape()));
    const Tensor up = upsample_nearest(params.up[t](x), 2);
    refined.maps.push_back(msst_forward(add(up, skip), params.msst[t]));
  }
  return bcfr_forward(refined, params.bcfr, config.interaction);
}

Tensor head_forward(const Tensor& feature, const Model& model, std::size_t task) {
  const Tensor fine = window_untokenize(model.psi(model.head_norm(feature)), model.config.partition);
  return model.task_proj.at(task)(fine);
}

std::vector<Tensor> model_forward(const Tensor& image, const Model& model, const TaskOrder* order) {
  const std::size_t tasks = model.config.tasks.size();
  const StageFeatures g = encoder_forward(image, model);
  if (tasks == 0) return {};
  TaskOrder scan_order = order                               ? *order
                         : model.config.task_order.empty() ? TaskOrder::identity(tasks)
                                                           : TaskOrder{model.config.task_order};
  scan_order.validate(tasks);
  TaskFeatureSet fs{std::vector<Tensor>(tasks, g.g[3]), std::move(scan_order)};
  for (std::size_t s = 0; s < 3; ++s) fs = mfr_forward(fs, g.g[2 - s], model.mfr[s], model.config, s);
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < tasks; ++t) out.push_back(head_forward(fs.maps[t], model, t));
  return out;
}

namespace {

std::size_t norm_params(std::size_t c) { return 2 * c; }
std::size_t ss2d_params(std::size_t c, std::size_t n) { return 4 * SSMParams::parameter_count(c, n); }

flops::Count ms_scan_flops(std::size_t c, const std::vector<std::size_t>& scales, bool dilated, std::size_t h,
                           std::size_t w, std::size_t n) {
  const std::size_t m = c / scales.size();
  flops::Count total = 0;
  for (auto s : scales) {
    total += flops::ss2d(dilated ? m : m * s * s, h / s, w / s, n);
    if (dilated && s > 1) total += flops::bilinear_restore(m, h, w);
  }
  return total;
}

}  // namespace

std::size_t count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t c = config.channels, w = config.partition, n = config.state, tasks = config.tasks.size();
  std::size_t total = Linear::parameter_count(config.in_channels * w * w, c);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t ci = config.stage_channels(i);
    if (i > 0) total += Linear::parameter_count(4 * config.stage_channels(i - 1), ci);
    total += norm_params(ci) + ss2d_params(ci, n);
  }
  if (tasks == 0) return total;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t cs = config.stage_channels(2 - s);
    const std::size_t pass = norm_params(cs) + ScaleConfig::parameter_count(cs, config.mfr_scales[s], n, config.dilated) +
                             2 * Linear::parameter_count(cs, cs);
    total += tasks * (Linear::parameter_count(2 * cs, cs) + 2 * pass);
    if (config.interaction == Interaction::none) continue;
    total += tasks * (norm_params(cs) + Linear::parameter_count(cs, cs));
    if (config.interaction == Interaction::bi_scan)
      total += BiScan::parameter_count(config.bi_scan_for(s), cs, n);
    else
      total += Linear::parameter_count(tasks * cs, cs) + norm_params(cs) + ss2d_params(cs, n);
  }
  total += norm_params(c) + Linear::parameter_count(c, config.head_channels);
  for (const auto& t : config.tasks) total += Linear::parameter_count(config.head_channels / (w * w), t.out_channels);
  return total;
}

std::uint64_t count_flops(const ModelConfig& config, std::size_t height, std::size_t width) {
  config.validate_input(height, width);
  using flops::Count;
  const Count n = config.state, tasks = config.tasks.size(), w = config.partition;
  const Count pix = static_cast<Count>(height) * width;
  auto positions = [&](std::size_t stage) { return pix / ((w * w) << (2 * stage)); };

  Count total = flops::channel_linear(config.in_channels * w * w, config.channels, positions(0));
  for (std::size_t i = 0; i < 4; ++i) {
    const Count ci = config.stage_channels(i), p = positions(i);
    const Count hi = height / (w << i), wi = width / (w << i);
    if (i > 0) total += flops::channel_linear(4 * config.stage_channels(i - 1), ci, p);
    total += flops::layer_norm(ci, p) + flops::ss2d(ci, hi, wi, n) + flops::elementwise(ci * p);
  }
  if (tasks == 0) return total;

  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t e = 2 - s;
    const Count cs = config.stage_channels(e), p = positions(e);
    const std::size_t hs = height / (w << e), ws = width / (w << e);
    const Count up = flops::channel_linear(2 * cs, cs, p / 4) + flops::elementwise(cs * p);
    // norm, scan, gate linear + silu, product, projection, residual
    const Count pass = flops::layer_norm(cs, p) + ms_scan_flops(cs, config.mfr_scales[s], config.dilated, hs, ws, n) +
                       flops::channel_linear(cs, cs, p) + flops::elementwise(cs * p) + flops::elementwise(cs * p) +
                       flops::channel_linear(cs, cs, p) + flops::elementwise(cs * p);
    total += tasks * (up + 2 * pass);
    if (config.interaction == Interaction::none) continue;
    // norm, gate linear + sigmoid, then the gated merge (1 - G: 2, two products, two sums)
    total += tasks * (flops::layer_norm(cs, p) + flops::channel_linear(cs, cs, p) + flops::elementwise(cs * p) +
                      flops::elementwise(6 * cs * p));
    if (config.interaction == Interaction::bi_scan)
      total += flop_count(config.bi_scan_for(s), tasks, cs, hs, ws, n);
    else
      total += flops::channel_linear(tasks * cs, cs, p) + flops::layer_norm(cs, p) + flops::ss2d(cs, hs, ws, n);
  }
  const Count fine = config.head_channels / (w * w);
  for (const auto& t : config.tasks)
    total += flops::layer_norm(config.channels, positions(0)) +
             flops::channel_linear(config.channels, config.head_channels, positions(0)) +
             flops::channel_linear(fine, t.out_channels, pix);
  return total;
}

}  // namespace mtscan
