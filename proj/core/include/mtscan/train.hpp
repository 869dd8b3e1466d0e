#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtscan/autodiff.hpp"
#include "mtscan/data.hpp"
#include "mtscan/model.hpp"

namespace mtscan {

/// Mean |pred - target| over entries whose mask is set. Zero (and no
/// gradient) when nothing is valid.
Tensor masked_l1(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask);
/// Mean pixel cross-entropy of K x H x W logits against H x W class ids;
/// kIgnoreLabel pixels are skipped. A pixel of class c counts with weight
/// class_weights[c] (all 1 when empty). Throws DataError for an id >= K.
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint16_t> labels,
                     std::span<const double> class_weights = {});

/// Loss of one task head against the matching labels of a sample.
Tensor task_loss(const Tensor& pred, const SceneSample& sample, const TaskSpec& task);
/// Sum over tasks of weight * task loss.
Tensor loss_total(const std::vector<Tensor>& preds, const SceneSample& sample, const std::vector<TaskSpec>& tasks);

struct AdamOptions {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Adam with decoupled weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});
  void step(const Gradients& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// base * (1 - iter / total)^power; 0 at iter == total.
double poly_lr(double base, std::size_t iter, std::size_t total, double power = 0.9);

/// Mean IoU over classes present in prediction or label, ignore pixels skipped.
double metric_miou(std::span<const std::uint16_t> pred, std::span<const std::uint16_t> label, std::size_t classes);
/// Root mean squared error over pixels with label > 0.
double metric_rmse(std::span<const double> pred, std::span<const double> label);
/// Mean angle in degrees between 3 x P normal fields, over pixels whose label
/// normal is non-zero. Predictions are unit-normalised first.
double metric_merr(std::span<const double> pred, std::span<const double> label);

struct BoundaryCounts {
  std::size_t pred = 0, pred_matched = 0, label = 0, label_matched = 0;
  BoundaryCounts& operator+=(const BoundaryCounts& o);
  double f1() const;
};
/// Predicted edges are prob >= threshold; a prediction (label) edge counts as
/// matched when a label (prediction) edge lies within one pixel.
BoundaryCounts boundary_counts(std::span<const double> prob, std::span<const std::uint16_t> label, std::size_t height,
                               std::size_t width, double threshold = 0.5);
double metric_boundary_f(std::span<const double> prob, std::span<const std::uint16_t> label, std::size_t height,
                         std::size_t width, double threshold = 0.5);

struct MetricValue {
  std::string task;
  std::string metric;
  double value = 0.0;
  bool higher_better = true;
};

struct MetricReport {
  std::vector<MetricValue> values;

  const MetricValue* find(const std::string& task) const;
};

/// (100 / T) * sum_t sigma_t (M_t - S_t) / S_t, matched by task name.
double mtl_gain(const MetricReport& report, const MetricReport& stl);

struct Evaluation {
  MetricReport report;
  double loss = 0.0;
};

/// Pass over a dataset without augmentation. With `order_rng`, every sample
/// is scanned in a freshly shuffled task order.
Evaluation evaluate(const Model& model, const Dataset& data, Rng* order_rng = nullptr);

struct TrainOptions {
  std::size_t iterations = 1000;
  std::size_t batch = 2;
  double lr = 2e-3;
  double poly_power = 0.9;
  AdamOptions adam;
  AugmentOptions augment;
  std::size_t eval_every = 100;
  /// Fresh random task scan order at every iteration.
  bool random_task_order = false;
  std::uint64_t seed = 0;
};

struct HistoryRow {
  std::size_t iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::vector<double> task_losses;
  std::optional<Evaluation> eval;
  std::optional<double> delta_m;
};

struct TrainResult {
  Model model;       // parameters of the best evaluation
  std::vector<HistoryRow> history;
  Evaluation final_eval;  // of the best parameters
  std::size_t best_iteration = 0;
};

/// Trains from Model::init(config, seed). The kept parameters are those with
/// the best validation gain against `stl`, or the lowest validation loss when
/// no reference is given. Throws NumericalError naming the iteration when the
/// loss stops being finite.
TrainResult train(const ModelConfig& config, const Dataset& train_data, const Dataset& val_data,
                  const TrainOptions& options, const MetricReport* stl = nullptr);

/// iteration,lr,loss,loss_<task>...,val_loss,<task>_<metric>...,delta_m
std::string history_csv(const std::vector<HistoryRow>& history, const std::vector<TaskSpec>& tasks);

}  // namespace mtscan
