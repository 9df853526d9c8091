// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  Adam with bias correction and the per-epoch cosine learning rate.
 */
#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdcunet/params.hpp"

namespace gdc {

/// Raised when a training step meets a non-finite value.
class TrainingFault : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
  double clip_norm = 0.0;     // global gradient-norm clip; 0 disables

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
      throw ConfigError("Adam: betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("Adam: eps must be positive");
  }
};

template <class T>
class Adam {
public:
  Adam(ParamList<T> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
      m_.emplace_back(p.var.shape());
      v_.emplace_back(p.var.shape());
    }
  }

  /// One update with the gradients currently stored on the parameters.
  /// Throws TrainingFault (leaving parameters untouched) on a non-finite gradient.
  void step(double lr) {
    if (!(lr > 0)) throw UsageError("Adam::step: learning rate must be positive");
    double norm2 = 0;
    for (const auto& p : params_) {
      const auto& g = p.var.grad();
      if (!g.all_finite()) throw TrainingFault("non-finite gradient in " + p.name);
      for (T x : g.values()) norm2 += double(x) * double(x);
    }
    double clip = 1.0;
    if (cfg_.clip_norm > 0 && std::sqrt(norm2) > cfg_.clip_norm)
      clip = cfg_.clip_norm / std::sqrt(norm2);

    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(t_));
    const double c2 = 1.0 - std::pow(b2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& theta = params_[i].var.mutable_value();
      const auto& g = params_[i].var.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const double gk = double(g[k]) * clip + cfg_.weight_decay * double(theta[k]);
        const double mk = b1 * double(m[k]) + (1.0 - b1) * gk;
        const double vk = b2 * double(v[k]) + (1.0 - b2) * gk * gk;
        m[k] = T(mk);
        v[k] = T(vk);
        const double mhat = mk / c1, vhat = vk / c2;
        theta[k] = T(double(theta[k]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t steps() const { return t_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

private:
  ParamList<T> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

/// lr_min + (lr_init - lr_min) * (1 + cos(pi * epoch / (total - 1))) / 2.
/// A single-epoch schedule stays at lr_init.
inline double cosine_lr(int epoch, int total_epochs, double lr_init, double lr_min) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs)
    throw UsageError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                     std::to_string(total_epochs) + ")");
  if (total_epochs == 1 || epoch == 0) return lr_init;
  if (epoch == total_epochs - 1) return lr_min;
  const double phase = std::numbers::pi * double(epoch) / double(total_epochs - 1);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace gdc
