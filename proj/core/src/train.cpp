#include "mtscan/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "mtscan/error.hpp"
#include "mtscan/ops.hpp"

namespace mtscan {

using detail::make_result;

Tensor masked_l1(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  const std::size_t n = pred.numel();
  if (target.size() != n || mask.size() != n)
    throw ShapeError("masked_l1: prediction " + shape_str(pred.shape()) + " does not match its target");
  const auto p = pred.data();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) {
      if (!std::isfinite(target[i])) throw DataError("non-finite regression target");
      total += std::abs(p[i] - target[i]);
      ++count;
    }
  if (count == 0) return Tensor::scalar(0.0);
  std::vector<double> sign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) sign[i] = p[i] > target[i] ? 1.0 : (p[i] < target[i] ? -1.0 : 0.0);
  const double inv = 1.0 / static_cast<double>(count);
  return make_result(
      {1}, {total * inv}, {&pred},
      [sign = std::move(sign), inv](std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gp = *pg[0];
        for (std::size_t i = 0; i < sign.size(); ++i) gp[i] += g[0] * inv * sign[i];
      },
      "masked_l1");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint16_t> labels,
                     std::span<const double> class_weights) {
  if (logits.rank() != 3) throw ShapeError("cross_entropy expects K x H x W logits");
  const std::size_t k = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  if (labels.size() != hw) throw ShapeError("cross_entropy: label map does not match logits");
  if (!class_weights.empty() && class_weights.size() != k)
    throw ShapeError("cross_entropy: " + std::to_string(class_weights.size()) + " class weights for " +
                     std::to_string(k) + " classes");
  std::vector<double> cw(k, 1.0);
  if (!class_weights.empty()) cw.assign(class_weights.begin(), class_weights.end());
  const auto z = logits.data();
  std::vector<double> prob(k * hw, 0.0);
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    const auto l = labels[p];
    if (l == kIgnoreLabel) continue;
    if (l >= k) throw DataError("class id " + std::to_string(l) + " out of range for " + std::to_string(k) + " classes");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, z[c * hw + p]);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c * hw + p] - mx);
    for (std::size_t c = 0; c < k; ++c) prob[c * hw + p] = std::exp(z[c * hw + p] - mx) / sum;
    total += cw[l] * (mx + std::log(sum) - z[l * hw + p]);
    ++count;
  }
  if (count == 0) return Tensor::scalar(0.0);
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::uint16_t> lab(labels.begin(), labels.end());
  return make_result(
      {1}, {total * inv}, {&logits},
      [prob = std::move(prob), lab = std::move(lab), cw = std::move(cw), k, hw, inv](
          std::span<const double> g, std::span<std::vector<double>* const> pg) {
        auto& gz = *pg[0];
        for (std::size_t p = 0; p < hw; ++p) {
          if (lab[p] == kIgnoreLabel) continue;
          const double s = g[0] * inv * cw[lab[p]];
          for (std::size_t c = 0; c < k; ++c) gz[c * hw + p] += s * (prob[c * hw + p] - (c == lab[p] ? 1.0 : 0.0));
        }
      },
      "cross_entropy");
}

Tensor task_loss(const Tensor& pred, const SceneSample& s, const TaskSpec& task) {
  const std::size_t hw = s.height * s.width;
  if (pred.rank() != 3 || pred.dim(1) != s.height || pred.dim(2) != s.width || pred.dim(0) != task.out_channels)
    throw ShapeError("prediction " + shape_str(pred.shape()) + " does not fit task '" + task.name + "'");
  switch (task.kind) {
    case TaskKind::semseg:
    case TaskKind::boundary: {
      if (task.loss != LossKind::cross_entropy) throw ConfigError("class-map task '" + task.name + "' needs cross-entropy");
      return cross_entropy(pred, task.kind == TaskKind::semseg ? s.semseg : s.boundary, task.class_weights);
    }
    case TaskKind::depth: {
      if (task.out_channels != 1) throw ConfigError("depth task needs one output channel");
      std::vector<std::uint8_t> mask(hw);
      for (std::size_t p = 0; p < hw; ++p) mask[p] = s.depth[p] > 0.0;
      return masked_l1(pred, s.depth, mask);
    }
    case TaskKind::normals: {
      if (task.out_channels != 3) throw ConfigError("normals task needs three output channels");
      std::vector<std::uint8_t> mask(3 * hw);
      for (std::size_t p = 0; p < hw; ++p) {
        const bool ok = s.normals[p] != 0.0 || s.normals[hw + p] != 0.0 || s.normals[2 * hw + p] != 0.0;
        mask[p] = mask[hw + p] = mask[2 * hw + p] = ok;
      }
      return masked_l1(pred, s.normals, mask);
    }
  }
  throw ConfigError("unknown task kind");
}

Tensor loss_total(const std::vector<Tensor>& preds, const SceneSample& s, const std::vector<TaskSpec>& tasks) {
  if (preds.size() != tasks.size()) throw ShapeError("one prediction per task is required");
  Tensor total;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Tensor l = affine(task_loss(preds[t], s, tasks[t]), tasks[t].weight, 0.0);
    total = total.defined() ? add(total, l) : l;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(const Gradients& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    const auto* g = grads.find(params_[i]);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt_.eps);
      w[j] -= lr * (update + opt_.weight_decay * w[j]);
    }
  }
}

double poly_lr(double base, std::size_t iter, std::size_t total, double power) {
  if (total == 0 || iter >= total) return 0.0;
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

double metric_miou(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> label, std::size_t classes) {
  if (pred.size() != label.size()) throw ShapeError("mIoU: prediction and label sizes differ");
  std::vector<std::size_t> inter(classes, 0), uni(classes, 0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    const auto l = label[i];
    if (l == kIgnoreLabel) continue;
    const auto p = pred[i];
    if (l >= classes || p >= classes) throw DataError("class id out of range in mIoU");
    ++valid;
    if (p == l) {
      ++inter[l];
      ++uni[l];
    } else {
      ++uni[l];
      ++uni[p];
    }
  }
  if (valid == 0) throw MetricError("mIoU over an empty valid mask");
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c)
    if (uni[c] > 0) {
      sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
      ++present;
    }
  return sum / static_cast<double>(present);
}

double metric_rmse(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) throw ShapeError("RMSE: prediction and label sizes differ");
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] > 0.0) {
      sq += (pred[i] - label[i]) * (pred[i] - label[i]);
      ++n;
    }
  if (n == 0) throw MetricError("RMSE over an empty valid mask");
  return std::sqrt(sq / static_cast<double>(n));
}

double metric_merr(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size() || pred.size() % 3 != 0) throw ShapeError("mErr expects two 3 x P normal fields");
  const std::size_t p = pred.size() / 3;
  constexpr double kDeg = 180.0 / 3.14159265358979323846;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p; ++i) {
    const double lx = label[i], ly = label[p + i], lz = label[2 * p + i];
    const double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
    if (ln == 0.0) continue;
    const double px = pred[i], py = pred[p + i], pz = pred[2 * p + i];
    const double pn = std::sqrt(px * px + py * py + pz * pz);
    double angle = 90.0;
    if (pn > 0.0) angle = std::acos(std::clamp((px * lx + py * ly + pz * lz) / (pn * ln), -1.0, 1.0)) * kDeg;
    sum += angle;
    ++n;
  }
  if (n == 0) throw MetricError("mErr over an empty valid mask");
  return sum / static_cast<double>(n);
}

BoundaryCounts& BoundaryCounts::operator+=(const BoundaryCounts& o) {
  pred += o.pred;
  pred_matched += o.pred_matched;
  label += o.label;
  label_matched += o.label_matched;
  return *this;
}

double BoundaryCounts::f1() const {
  if (pred == 0 && label == 0) return 1.0;
  if (pred == 0 || label == 0) return 0.0;
  const double precision = static_cast<double>(pred_matched) / static_cast<double>(pred);
  const double recall = static_cast<double>(label_matched) / static_cast<double>(label);
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

BoundaryCounts boundary_counts(std::span<const double> prob, std::span<const std::uint16_t> label, std::size_t height,
                               std::size_t width, double threshold) {
  const std::size_t hw = height * width;
  if (prob.size() != hw || label.size() != hw) throw ShapeError("boundary F: maps do not match the extents");
  std::vector<std::uint8_t> pe(hw, 0), le(hw, 0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < hw; ++i) {
    if (label[i] == kIgnoreLabel) continue;
    ++valid;
    pe[i] = prob[i] >= threshold;
    le[i] = label[i] == 1;
  }
  if (valid == 0) throw MetricError("boundary F over an empty valid mask");
  auto near = [&](const std::vector<std::uint8_t>& m, std::size_t y, std::size_t x) {
    for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(height - 1, y + 1); ++yy)
      for (std::size_t xx = x > 0 ? x - 1 : 0; xx <= std::min(width - 1, x + 1); ++xx)
        if (m[yy * width + xx]) return true;
    return false;
  };
  BoundaryCounts c;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      if (pe[i]) {
        ++c.pred;
        c.pred_matched += near(le, y, x);
      }
      if (le[i]) {
        ++c.label;
        c.label_matched += near(pe, y, x);
      }
    }
  return c;
}

double metric_boundary_f(std::span<const double> prob, std::span<const std::uint16_t> label, std::size_t height,
                         std::size_t width, double threshold) {
  return boundary_counts(prob, label, height, width, threshold).f1();
}

const MetricValue* MetricReport::find(const std::string& task) const {
  for (const auto& v : values)
    if (v.task == task) return &v;
  return nullptr;
}

double mtl_gain(const MetricReport& report, const MetricReport& stl) {
  if (report.values.size() != stl.values.size() || report.values.empty())
    throw MetricError("MTL gain needs reports over the same task set");
  double sum = 0.0;
  for (const auto& m : report.values) {
    const MetricValue* s = stl.find(m.task);
    if (!s) throw MetricError("reference report lacks task '" + m.task + "'");
    if (s->value == 0.0) throw MetricError("reference metric of '" + m.task + "' is zero");
    sum += (m.higher_better ? 1.0 : -1.0) * (m.value - s->value) / s->value;
  }
  return 100.0 * sum / static_cast<double>(report.values.size());
}

namespace {

std::string metric_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::semseg: return "miou";
    case TaskKind::depth: return "rmse";
    case TaskKind::normals: return "merr";
    case TaskKind::boundary: return "f1";
  }
  return "?";
}

bool higher_better(TaskKind kind) { return kind == TaskKind::semseg || kind == TaskKind::boundary; }

}  // namespace

Evaluation evaluate(const Model& model, const Dataset& data, Rng* order_rng) {
  if (data.size() == 0) throw DataError("evaluation set is empty");
  const auto& tasks = model.config.tasks;
  NoGradGuard no_grad;
  struct Acc {
    std::vector<std::uint16_t> cls_pred, cls_label;
    std::vector<double> depth_pred, depth_label;
    std::array<std::vector<double>, 3> n_pred, n_label;
    BoundaryCounts edges;
  };
  std::vector<Acc> acc(tasks.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SceneSample& s = data.at(i);
    TaskOrder order = model.config.task_order.empty() ? TaskOrder::identity(tasks.size())
                                                       : TaskOrder{model.config.task_order};
    if (order_rng) std::shuffle(order.perm.begin(), order.perm.end(), *order_rng);
    const auto preds = model_forward(s.image, model, &order);
    loss += loss_total(preds, s, tasks).item();
    const std::size_t hw = s.height * s.width;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto p = preds[t].data();
      Acc& a = acc[t];
      switch (tasks[t].kind) {
        case TaskKind::semseg: {
          const std::size_t k = tasks[t].out_channels;
          for (std::size_t q = 0; q < hw; ++q) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
              if (p[c * hw + q] > p[best * hw + q]) best = c;
            a.cls_pred.push_back(static_cast<std::uint16_t>(best));
          }
          a.cls_label.insert(a.cls_label.end(), s.semseg.begin(), s.semseg.end());
          break;
        }
        case TaskKind::depth:
          a.depth_pred.insert(a.depth_pred.end(), p.begin(), p.end());
          a.depth_label.insert(a.depth_label.end(), s.depth.begin(), s.depth.end());
          break;
        case TaskKind::normals:
          for (std::size_t c = 0; c < 3; ++c) {
            a.n_pred[c].insert(a.n_pred[c].end(), p.begin() + c * hw, p.begin() + (c + 1) * hw);
            a.n_label[c].insert(a.n_label[c].end(), s.normals.begin() + c * hw, s.normals.begin() + (c + 1) * hw);
          }
          break;
        case TaskKind::boundary: {
          std::vector<double> prob(hw);
          for (std::size_t q = 0; q < hw; ++q) prob[q] = 1.0 / (1.0 + std::exp(p[q] - p[hw + q]));
          a.edges += boundary_counts(prob, s.boundary, s.height, s.width);
          break;
        }
      }
    }
  }
  Evaluation ev;
  ev.loss = loss / static_cast<double>(data.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Acc& a = acc[t];
    double value = 0.0;
    switch (tasks[t].kind) {
      case TaskKind::semseg: value = 100.0 * metric_miou(a.cls_pred, a.cls_label, tasks[t].out_channels); break;
      case TaskKind::depth: value = metric_rmse(a.depth_pred, a.depth_label); break;
      case TaskKind::normals: {
        std::vector<double> p, l;
        for (std::size_t c = 0; c < 3; ++c) {
          p.insert(p.end(), a.n_pred[c].begin(), a.n_pred[c].end());
          l.insert(l.end(), a.n_label[c].begin(), a.n_label[c].end());
        }
        value = metric_merr(p, l);
        break;
      }
      case TaskKind::boundary: value = 100.0 * a.edges.f1(); break;
    }
    ev.report.values.push_back({tasks[t].name, metric_name(tasks[t].kind), value, higher_better(tasks[t].kind)});
  }
  return ev;
}

TrainResult train(const ModelConfig& config, const Dataset& train_data, const Dataset& val_data,
                  const TrainOptions& options, const MetricReport* stl) {
  if (config.tasks.empty()) throw ConfigError("training needs at least one task");
  if (train_data.size() == 0) throw DataError("training set is empty");
  const SceneSample& probe = train_data.at(0);
  config.validate_input(probe.height, probe.width);
  if (options.eval_every == 0) throw ConfigError("eval_every must be positive");

  TrainResult result;
  result.model = Model::init(config, options.seed);
  Model& model = result.model;
  const auto params = model.parameters();
  Adam adam(params, options.adam);
  BatchIterator batches(train_data, options.batch, options.seed, options.augment);
  Rng order_rng = make_rng(options.seed, 0x6f72646572ULL);
  const std::size_t tasks = config.tasks.size();

  std::vector<std::vector<double>> best(params.size());
  double best_score = -std::numeric_limits<double>::infinity();
  auto consider = [&](std::size_t iteration, HistoryRow* row) {
    Rng eval_rng = make_rng(options.seed, 0x6576616cULL);
    Evaluation ev = evaluate(model, val_data, options.random_task_order ? &eval_rng : nullptr);
    std::optional<double> dm;
    if (stl) dm = mtl_gain(ev.report, *stl);
    const double score = dm ? *dm : -ev.loss;
    if (score > best_score) {
      best_score = score;
      result.best_iteration = iteration;
      result.final_eval = ev;
      for (std::size_t i = 0; i < params.size(); ++i) best[i].assign(params[i].data().begin(), params[i].data().end());
    }
    if (row) {
      row->eval = std::move(ev);
      row->delta_m = dm;
    }
  };

  if (options.iterations == 0) consider(0, nullptr);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    HistoryRow row;
    row.iteration = it + 1;
    row.lr = poly_lr(options.lr, it, options.iterations, options.poly_power);
    row.task_losses.assign(tasks, 0.0);
    TaskOrder order = config.task_order.empty() ? TaskOrder::identity(tasks) : TaskOrder{config.task_order};
    if (options.random_task_order) std::shuffle(order.perm.begin(), order.perm.end(), order_rng);
    try {
      const auto batch = batches.next();
      Tensor loss;
      for (const auto& s : batch) {
        const auto preds = model_forward(s.image, model, &order);
        for (std::size_t t = 0; t < tasks; ++t) {
          const Tensor l = affine(task_loss(preds[t], s, config.tasks[t]), config.tasks[t].weight, 0.0);
          row.task_losses[t] += l.item() / static_cast<double>(batch.size());
          loss = loss.defined() ? add(loss, l) : l;
        }
      }
      loss = affine(loss, 1.0 / static_cast<double>(batch.size()), 0.0);
      row.loss = loss.item();
      adam.step(backward(loss), row.lr);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at iteration " + std::to_string(it + 1) + ": " + e.what());
    }
    if ((it + 1) % options.eval_every == 0 || it + 1 == options.iterations) consider(it + 1, &row);
    result.history.push_back(std::move(row));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = Tensor(params[i]).mutable_data();
    std::copy(best[i].begin(), best[i].end(), dst.begin());
  }
  return result;
}

namespace {
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace

std::string history_csv(const std::vector<HistoryRow>& history, const std::vector<TaskSpec>& tasks) {
  std::string out = "iteration,lr,loss";
  for (const auto& t : tasks) out += ",loss_" + t.name;
  out += ",val_loss";
  for (const auto& t : tasks) out += "," + t.name + "_" + metric_name(t.kind);
  out += ",delta_m\n";
  for (const auto& r : history) {
    out += std::to_string(r.iteration) + "," + num(r.lr) + "," + num(r.loss);
    for (double l : r.task_losses) out += "," + num(l);
    out += "," + (r.eval ? num(r.eval->loss) : std::string());
    for (std::size_t t = 0; t < tasks.size(); ++t) out += "," + (r.eval ? num(r.eval->report.values[t].value) : std::string());
    out += "," + (r.delta_m ? num(*r.delta_m) : std::string()) + "\n";
  }
  return out;
}

}  // namespace mtscan
