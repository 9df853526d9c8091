// SPDX-License-Identifier: Apache-2.0
/**
 * @file   train.hpp
 * @brief  Minibatch training loop with per-epoch test evaluation.
 *
 * Each epoch shuffles the training list with a generator seeded once from
 * TrainConfig::seed, runs Adam steps on bce_dice_loss over minibatches (the
 * incomplete last batch included), then scores every test image. The epoch
 * whose mean test IoU is highest is kept as the best checkpoint.
 */
#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "gdcunet/dataset.hpp"
#include "gdcunet/metrics.hpp"
#include "gdcunet/model.hpp"
#include "gdcunet/optim.hpp"

namespace gdc {

struct TrainConfig {
  int batch_size = 4;
  double lr_init = 1e-4;
  double lr_min = 1e-5;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;
  int total_epochs = 50;
  std::uint64_t seed = 0;
  LossConfig loss;

  AdamConfig adam() const { return {beta1, beta2, adam_eps, weight_decay, clip_norm}; }

  void validate() const {
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be positive");
    if (total_epochs < 1) throw ConfigError("TrainConfig: total_epochs must be positive");
    if (!(lr_min > 0) || !(lr_min <= lr_init))
      throw ConfigError("TrainConfig: need 0 < lr_min <= lr_init");
    adam().validate();
    loss.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"lr_init", c.lr_init},   {"lr_min", c.lr_min},
       {"beta1", c.beta1},           {"beta2", c.beta2},       {"adam_eps", c.adam_eps},
       {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm},
       {"total_epochs", c.total_epochs}, {"seed", c.seed},
       {"bce_weight", c.loss.bce_weight}, {"dice_epsilon", c.loss.epsilon}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_init = j.value("lr_init", c.lr_init);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.total_epochs = j.value("total_epochs", c.total_epochs);
  c.seed = j.value("seed", c.seed);
  c.loss.bce_weight = j.value("bce_weight", c.loss.bce_weight);
  c.loss.epsilon = j.value("dice_epsilon", c.loss.epsilon);
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;  // mean over training images
  MetricsReport test;     // mean over test images
};

inline const char* epoch_log_header() { return "epoch,lr,train_loss,test_iou,test_dice"; }

inline void write_epoch_row(std::ostream& os, const EpochRecord& r) {
  const auto old = os.precision(17);
  os << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.test.iou << ',' << r.test.dice
     << '\n';
  os.precision(old);
}

template <class T>
using ParamSnapshot = std::vector<Tensor<T>>;

template <class T>
ParamSnapshot<T> snapshot(const ParamList<T>& params) {
  ParamSnapshot<T> out;
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

template <class T>
void restore(ParamList<T>& params, const ParamSnapshot<T>& snap) {
  if (snap.size() != params.size()) throw UsageError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].var.mutable_value() = snap[i];
}

template <class T>
struct TrainResult {
  std::vector<EpochRecord> log;
  int best_epoch = -1;
  MetricsReport best;
  ParamSnapshot<T> best_parameters;
  std::size_t steps = 0;
};

/// Stacks images (1, H, W, 3) into a (B, H, W, 3) batch.
template <class T>
Tensor<T> stack_images(const std::vector<const SamplePair*>& items) {
  const Shape s0 = items.front()->image.shape();
  Tensor<T> out(Shape{items.size(), s0.h, s0.w, s0.c});
  std::size_t k = 0;
  for (const auto* it : items) {
    require_same_shape(it->image.shape(), s0, "stack_images");
    for (double v : it->image.values()) out[k++] = static_cast<T>(v);
  }
  return out;
}

template <class T>
Tensor<T> stack_masks(const std::vector<const SamplePair*>& items) {
  const auto& m0 = items.front()->mask;
  Tensor<T> out(Shape{items.size(), m0.height, m0.width, 1});
  std::size_t k = 0;
  for (const auto* it : items)
    for (auto v : it->mask.data) out[k++] = static_cast<T>(v);
  return out;
}

/// Thresholded prediction for a single sample.
template <class T>
BinaryMask predict(const GDCUnetModel<T>& model, const SamplePair& p) {
  NoGradGuard guard;
  const auto logits = model.forward(Var<T>(stack_images<T>({&p})));
  return threshold(logits.value());
}

/// Per-image reports on `items` in order.
template <class T>
std::vector<MetricsReport> evaluate(const GDCUnetModel<T>& model, const std::vector<SamplePair>& items) {
  std::vector<MetricsReport> rows;
  for (const auto& p : items) rows.push_back(evaluate_masks(predict(model, p), p.mask));
  return rows;
}

/// Runs the full schedule. `on_epoch` sees each record as it is produced and
/// may return false to end training after that epoch.
template <class T>
TrainResult<T> train(GDCUnetModel<T>& model, const DatasetSplit& data, const TrainConfig& cfg,
                     const std::function<bool(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("train: empty training split");
  if (data.test.empty()) throw ConfigError("train: empty test split");

  auto params = model.parameters();
  Adam<T> opt(params, cfg.adam());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult<T> result;
  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.total_epochs, cfg.lr_init, cfg.lr_min);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::vector<const SamplePair*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.train[order[i]]);

      opt.zero_grad();
      const auto logits = model.forward(Var<T>(stack_images<T>(batch)));
      const auto loss = bce_dice_loss(logits, stack_masks<T>(batch), cfg.loss);
      const double lv = double(loss.value()[0]);
      if (!std::isfinite(lv))
        throw TrainingFault("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(opt.steps()));
      backward(loss);
      opt.step(lr);
      loss_sum += lv * double(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / double(order.size());
    rec.test = mean_report(evaluate(model, data.test));
    result.log.push_back(rec);
    if (result.best_epoch < 0 || rec.test.iou > result.best.iou) {
      result.best_epoch = epoch;
      result.best = rec.test;
      result.best_parameters = snapshot(params);
    }
    if (on_epoch && !on_epoch(rec)) break;
  }
  result.steps = opt.steps();
  return result;
}

}  // namespace gdc
