#pragma once

#include <cmath>
#include <cstdint>

#include "cosmae/nn.hpp"

namespace cosmae {

struct AdamWConfig {
  double lr_base = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Per-parameter first/second moments, laid out in ParamSet order.
template <typename T>
struct OptimizerState {
  std::int64_t step_count = 0;
  AdamWConfig cfg;
  ParamSet<T> m;  // first moments
  ParamSet<T> v;  // second moments

  static OptimizerState init(const ParamSet<T>& params, const AdamWConfig& cfg) {
    OptimizerState s;
    s.cfg = cfg;
    for (const auto& e : params.entries()) {
      s.m.add(e.name, Tensor<T>(e.value.shape), e.trainable);
      s.v.add(e.name, Tensor<T>(e.value.shape), e.trainable);
    }
    return s;
  }

  bool tracks(const ParamSet<T>& params) const { return m.shape_compatible(params); }
};

// Decoupled weight decay AdamW. Only trainable entries move; frozen entries
// and their moments stay bit-identical.
template <typename T>
void adamw_step(ParamSet<T>& params, const ParamSet<T>& grads, OptimizerState<T>& state,
                double lr) {
  if (!state.tracks(params)) throw ConfigError("adamw_step: optimizer state does not match params");
  if (!params.shape_compatible(grads)) throw ConfigError("adamw_step: grads do not match params");

  state.step_count += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));

  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    const Tensor<T>& g = grads.at(e.name);
    Tensor<T>& m = state.m.at(e.name);
    Tensor<T>& v = state.v.at(e.name);
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      const double gi = static_cast<double>(g.data[i]);
      const double mi = b1 * static_cast<double>(m.data[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v.data[i]) + (1.0 - b2) * gi * gi;
      m.data[i] = static_cast<T>(mi);
      v.data[i] = static_cast<T>(vi);
      const double mhat = mi / bias1;
      const double vhat = vi / bias2;
      double w = static_cast<double>(e.value.data[i]);
      w -= lr * state.cfg.weight_decay * w;
      w -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
      e.value.data[i] = static_cast<T>(w);
    }
  }
}

// Linear warmup to lr_base followed by cosine annealing toward zero. All
// quantities are in optimizer steps; the two phases agree at the boundary.
struct ScheduleConfig {
  double lr_base = 1e-3;
  int warmup_epochs = 10;
  int total_epochs = 300;
  int steps_per_epoch = 1;

  void validate() const {
    if (lr_base <= 0) throw ConfigError("schedule: lr_base must be positive");
    if (steps_per_epoch <= 0) throw ConfigError("schedule: steps_per_epoch must be positive");
    if (warmup_epochs < 0 || warmup_epochs >= total_epochs) {
      throw ConfigError("schedule: requires 0 <= warmup_epochs < total_epochs");
    }
  }

  std::int64_t warmup_steps() const {
    return static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch;
  }
  std::int64_t total_steps() const {
    return static_cast<std::int64_t>(total_epochs) * steps_per_epoch;
  }
};

inline double lr_at(std::int64_t step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step < 0 || step >= cfg.total_steps()) throw UsageError("lr_at: step out of range");
  const std::int64_t w = cfg.warmup_steps();
  if (step < w) {
    return cfg.lr_base * static_cast<double>(step + 1) / static_cast<double>(w);
  }
  const double progress =
      static_cast<double>(step - w) / static_cast<double>(cfg.total_steps() - w);
  return cfg.lr_base * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace cosmae
