// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skd/autodiff.hpp"
#include "skd/error.hpp"

namespace skd {

enum class Decay { linear, none };

/// Linear warmup over ceil(warmup_ratio * total_steps) steps, then linear
/// decay to zero at total_steps (or constant).
struct LrSchedule {
  double base_rate = 3e-3;
  std::int64_t total_steps = 1;
  double warmup_ratio = 0.1;
  Decay decay = Decay::linear;

  std::int64_t warmup_steps() const {
    return static_cast<std::int64_t>(
        std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-12));
  }

  void validate() const {
    if (!(base_rate >= 0.0) || !std::isfinite(base_rate))
      throw ConfigError("learning rate must be finite and >= 0");
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0))
      throw ConfigError("warmup_ratio must be in [0, 1)");
  }
};

inline double lr_at(const LrSchedule& s, std::int64_t step) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw ConfigError("lr_at: step " + std::to_string(step) +
                      " outside [0, " + std::to_string(s.total_steps) + "]");
  const std::int64_t w = s.warmup_steps();
  if (step < w)
    return s.base_rate * static_cast<double>(step) / static_cast<double>(w);
  if (s.decay == Decay::none) return s.base_rate;
  return s.base_rate * static_cast<double>(s.total_steps - step) /
         static_cast<double>(s.total_steps - w);
}

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}
inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t steps_taken = 0;

  static OptimizerState make(OptimizerKind kind, std::size_t n) {
    OptimizerState s;
    s.kind = kind;
    if (kind == OptimizerKind::adam) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
    }
    return s;
  }
};

/// One update of `theta` in place with rate lr_at(schedule, step).
inline void optimizer_step(std::span<double> theta, const GradientSet& grads,
                           OptimizerState& state, const LrSchedule& schedule,
                           std::int64_t step) {
  if (step < 0) throw ConfigError("optimizer step must be >= 0");
  if (grads.size() != theta.size())
    throw InternalError("gradient/parameter size mismatch");
  const double lr = lr_at(schedule, step);
  std::vector<double> next(theta.begin(), theta.end());
  if (state.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i)
      next[i] -= lr * grads.values[i];
  } else {
    if (state.m.size() != theta.size()) {
      state.m.assign(theta.size(), 0.0);
      state.v.assign(theta.size(), 0.0);
    }
    const auto t = static_cast<double>(state.steps_taken + 1);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads.values[i];
      state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
      state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[i] / c1;
      const double vhat = state.v[i] / c2;
      next[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  for (std::size_t i = 0; i < next.size(); ++i)
    if (!std::isfinite(next[i]))
      throw NumericalError("non-finite parameter update at index " +
                           std::to_string(i));
  std::copy(next.begin(), next.end(), theta.begin());
  ++state.steps_taken;
}

}  // namespace skd
