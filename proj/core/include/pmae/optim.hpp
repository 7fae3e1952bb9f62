// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pmae/nn.hpp"

namespace pmae {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Per-depth learning-rate multipliers. Index 0 is the patch embedding,
/// 1..depth the blocks from the input side, depth+1 the head.
struct LlrdPlan {
  double decay = 1.0;
  std::size_t depth = 0;
  std::vector<double> multipliers;

  double multiplier(int layer) const;
};

// head x1, block i (1-based) x decay^(depth+1-i), embedding x decay^(depth+1).
LlrdPlan llrd_multipliers(std::size_t depth, double decay);

struct Schedule {
  double base_lr = 1e-3;
  double warmup_epochs = 0.0;
  double total_epochs = 1.0;
  std::size_t steps_per_epoch = 1;
  double min_lr = 0.0;

  std::size_t total_steps() const;
  double warmup_steps() const;
  void validate() const;
};

/// Linear ramp from 0 to base_lr over the warmup steps, then half-cosine
/// decay to min_lr at the last step.
double cosine_warmup_lr(const Schedule& schedule, std::size_t step);

// Linear scaling rule: reference_lr * effective_batch / 256.
double scaled_base_lr(double reference_lr, std::size_t effective_batch);

/// AdamW with bias correction and decoupled weight decay:
///   p <- p - lr*wd*p, then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// Parameters that received no gradient in a step are left untouched.
template <typename T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig cfg);

  // Applies one update with lr = scheduled_lr * plan.multiplier(layer).
  // Throws NumericError (state untouched) if any gradient is non-finite.
  void step(double scheduled_lr, const LlrdPlan* plan = nullptr);
  void zero_grad();

  const ParamList<T>& params() const { return params_; }
  const AdamWConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_count_; }
  // Learning rate actually applied to each parameter in the last step.
  const std::vector<double>& last_applied_lr() const { return last_lr_; }

  std::vector<T>& first_moment(std::size_t i) { return m_[i]; }
  std::vector<T>& second_moment(std::size_t i) { return v_[i]; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<T>& second_moment(std::size_t i) const { return v_[i]; }
  void set_step_count(std::size_t t) { step_count_ = t; }

 private:
  ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::vector<double> last_lr_;
  std::size_t step_count_ = 0;
};

/// Runs `micro_batches` forward/backward passes, scaling each loss by
/// 1/micro_batches so the summed gradients equal their average, then takes a
/// single optimizer step. Returns the mean unscaled loss.
template <typename T>
double accumulate_gradients(AdamW<T>& optimizer, std::size_t micro_batches,
                            const std::function<Tensor<T>(std::size_t)>& loss_of, double lr,
                            const LlrdPlan* plan = nullptr);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace pmae
