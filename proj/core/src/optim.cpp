// SPDX-License-Identifier: Apache-2.0
#include "pmae/optim.hpp"

#include <cmath>
#include <numbers>

#include "pmae/error.hpp"

namespace pmae {

double LlrdPlan::multiplier(int layer) const {
  if (multipliers.empty()) return 1.0;
  if (layer < 0 || static_cast<std::size_t>(layer) >= multipliers.size()) return 1.0;
  return multipliers[static_cast<std::size_t>(layer)];
}

LlrdPlan llrd_multipliers(std::size_t depth, double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("layer_decay", "must lie in (0, 1]");
  LlrdPlan plan{decay, depth, std::vector<double>(depth + 2)};
  for (std::size_t layer = 0; layer <= depth + 1; ++layer) {
    plan.multipliers[layer] = std::pow(decay, static_cast<double>(depth + 1 - layer));
  }
  return plan;
}

std::size_t Schedule::total_steps() const {
  return static_cast<std::size_t>(std::llround(total_epochs * static_cast<double>(steps_per_epoch)));
}

double Schedule::warmup_steps() const {
  return warmup_epochs * static_cast<double>(steps_per_epoch);
}

void Schedule::validate() const {
  if (!(base_lr >= 0.0)) throw ConfigError("lr", "base learning rate must be nonnegative");
  if (!(min_lr >= 0.0 && min_lr <= base_lr)) throw ConfigError("min_lr", "must lie in [0, base_lr]");
  if (steps_per_epoch == 0) throw ConfigError("steps_per_epoch", "must be positive");
  if (!(total_epochs > 0.0)) throw ConfigError("epochs", "must be positive");
  if (!(warmup_epochs >= 0.0 && warmup_epochs < total_epochs)) {
    throw ConfigError("warmup_epochs", "must lie in [0, total epochs)");
  }
}

double cosine_warmup_lr(const Schedule& schedule, std::size_t step) {
  schedule.validate();
  const auto total = schedule.total_steps();
  if (step > total) {
    throw ConfigError("step", "step " + std::to_string(step) + " beyond schedule end " + std::to_string(total));
  }
  const double warmup = schedule.warmup_steps();
  const double s = static_cast<double>(step);
  if (s < warmup) return schedule.base_lr * s / warmup;
  const double span = static_cast<double>(total) - warmup;
  const double progress = span > 0.0 ? (s - warmup) / span : 1.0;
  return schedule.min_lr + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double scaled_base_lr(double reference_lr, std::size_t effective_batch) {
  if (effective_batch == 0) throw ConfigError("batch_size", "effective batch must be at least 1");
  return reference_lr * static_cast<double>(effective_batch) / 256.0;
}

template <typename T>
AdamW<T>::AdamW(ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(cfg_.eps > 0.0)) throw ConfigError("adam_eps", "must be positive");
  if (!(cfg_.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be nonnegative");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
  last_lr_.assign(params_.size(), 0.0);
}

template <typename T>
void AdamW<T>::step(double scheduled_lr, const LlrdPlan* plan) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (auto g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + p.name + "; step skipped");
    }
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double correction1 = 1.0 - std::pow(cfg_.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg_.beta2, t);
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.tensor.has_grad()) {
      last_lr_[i] = 0.0;
      continue;
    }
    const double lr = scheduled_lr * (plan ? plan->multiplier(p.layer) : 1.0);
    last_lr_[i] = lr;
    const T decay_factor = static_cast<T>(1.0 - lr * (p.decay ? cfg_.weight_decay : 0.0));
    const T step_size = static_cast<T>(lr / correction1);
    const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(correction2));
    const T eps = static_cast<T>(cfg_.eps);
    auto values = p.tensor.mutable_values();
    auto grads = p.tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T g = grads[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      values[j] *= decay_factor;
      values[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_c2 + eps);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
double accumulate_gradients(AdamW<T>& optimizer, std::size_t micro_batches,
                            const std::function<Tensor<T>(std::size_t)>& loss_of, double lr, const LlrdPlan* plan) {
  if (micro_batches == 0) throw ConfigError("accumulation_steps", "must be at least 1");
  optimizer.zero_grad();
  double total = 0.0;
  const T weight = T(1) / static_cast<T>(micro_batches);
  for (std::size_t i = 0; i < micro_batches; ++i) {
    auto loss = loss_of(i);
    total += static_cast<double>(loss.item());
    auto scaled = micro_batches == 1 ? loss : scale(loss, weight);
    GradGraph<T> graph(scaled);
    graph.backward();
    graph.clear();
  }
  optimizer.step(lr, plan);
  return total / static_cast<double>(micro_batches);
}

template class AdamW<float>;
template class AdamW<double>;
template double accumulate_gradients(AdamW<float>&, std::size_t, const std::function<Tensor<float>(std::size_t)>&, double,
                                     const LlrdPlan*);
template double accumulate_gradients(AdamW<double>&, std::size_t, const std::function<Tensor<double>(std::size_t)>&,
                                     double, const LlrdPlan*);

}  // namespace pmae
