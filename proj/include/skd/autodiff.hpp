// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "skd/distribution.hpp"
#include "skd/divergence.hpp"
#include "skd/error.hpp"
#include "skd/lm.hpp"

namespace skd {

// Manual reverse mode for the fixed-context MLP. Every loss reduces to a
// per-position d(loss)/d(logits), which NeuralLM::backward pushes through
// the network.

enum class LossKind { nll, divergence };

struct LossSpec {
  LossKind kind = LossKind::divergence;
  DivergenceSpec divergence{};

  static LossSpec nll() { return {LossKind::nll, {}}; }
  static LossSpec of(DivergenceKind k) { return {LossKind::divergence, {k}}; }
};

/// One target sequence. `teacher[i]` is the frozen teacher conditional at
/// target position i (required for divergence losses, ignored for NLL).
struct LossItem {
  TokenSeq prompt;
  TokenSeq target;
  std::vector<Distribution> teacher;
};

/// Target positions holding `pad` are masked out and do not count toward
/// L_y.
struct LossBatch {
  std::vector<LossItem> items;
  TokenId pad = -1;
};

/// Shape-matched with NeuralLM::params().
struct GradientSet {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  bool all_finite() const {
    for (double g : values)
      if (!std::isfinite(g)) return false;
    return true;
  }
};

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

namespace detail {

inline void check_item(const LossItem& item, const LossSpec& spec,
                       std::size_t vocab) {
  if (spec.kind == LossKind::divergence) {
    if (item.teacher.size() != item.target.size())
      throw InternalError("teacher distributions do not match target length");
    for (const auto& t : item.teacher)
      if (t.size() != vocab) throw InternalError("teacher distribution shape");
  }
}

/// Positionwise loss value and d(loss)/d(logits) from softmax output `s`.
inline double position_loss_grad(const LossSpec& spec, const Logits& logits,
                                 const Distribution& s, TokenId target,
                                 const Distribution* teacher,
                                 std::vector<double>& dlogits) {
  const std::size_t v = s.size();
  dlogits.assign(v, 0.0);
  if (spec.kind == LossKind::nll) {
    const auto lp = log_softmax(logits);
    for (std::size_t j = 0; j < v; ++j) dlogits[j] = s[j];
    dlogits[static_cast<std::size_t>(target)] -= 1.0;
    return -lp[static_cast<std::size_t>(target)];
  }
  const Distribution& t = *teacher;
  const double eps = spec.divergence.epsilon_floor;
  switch (spec.divergence.kind) {
    case DivergenceKind::forward_kl: {
      // d/dl_j sum_c T_c log max(S_c, eps) = T_j [S_j > eps] - S_j sum_{S_c>eps} T_c
      double live_mass = 0.0;
      for (std::size_t c = 0; c < v; ++c)
        if (s[c] > eps) live_mass += t[c];
      for (std::size_t j = 0; j < v; ++j)
        dlogits[j] = s[j] * live_mass - (s[j] > eps ? t[j] : 0.0);
      return kl(t, s, eps);
    }
    case DivergenceKind::reverse_kl: {
      // L = sum S (log S - log max(T, eps)); dL/dl_j = S_j (f_j - L)
      std::vector<double> f(v, 0.0);
      double l = 0.0;
      for (std::size_t c = 0; c < v; ++c) {
        if (s[c] <= 0.0) continue;
        f[c] = std::log(s[c]) - std::log(std::max(t[c], eps));
        l += s[c] * f[c];
      }
      for (std::size_t j = 0; j < v; ++j)
        dlogits[j] = s[j] > 0.0 ? s[j] * (f[j] - l) : 0.0;
      return reverse_kl(t, s, eps);
    }
    case DivergenceKind::jsd:
    case DivergenceKind::tv: {
      // Through dL/dS and the softmax Jacobian.
      std::vector<double> g(v, 0.0);
      for (std::size_t c = 0; c < v; ++c) {
        if (spec.divergence.kind == DivergenceKind::jsd) {
          const double m = 0.5 * (t[c] + s[c]);
          g[c] = s[c] > 0.0 ? 0.5 * std::log(s[c] / m) : 0.0;
        } else {
          const double d = s[c] - t[c];
          g[c] = d > 0.0 ? 0.5 : (d < 0.0 ? -0.5 : 0.0);
        }
      }
      double sg = 0.0;
      for (std::size_t c = 0; c < v; ++c) sg += s[c] * g[c];
      for (std::size_t j = 0; j < v; ++j) dlogits[j] = s[j] * (g[j] - sg);
      return spec.divergence.kind == DivergenceKind::jsd ? jsd(t, s) : tv(t, s);
    }
  }
  throw InternalError("unhandled loss kind");
}

}  // namespace detail

/// Batch mean of per-sequence (1/L_y)-normalized losses and its exact
/// gradient with respect to the student parameters. Teacher distributions
/// are constants.
inline LossAndGrad forward_backward(const NeuralLM& student,
                                    const LossBatch& batch,
                                    const LossSpec& spec) {
  if (batch.items.empty()) throw InputError("empty loss batch");
  if (spec.kind == LossKind::divergence) spec.divergence.validate();
  LossAndGrad out;
  out.grads.values.assign(student.params().size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.items.size());
  std::vector<double> dlogits;
  std::vector<double> scratch(student.params().size(), 0.0);

  for (std::size_t b = 0; b < batch.items.size(); ++b) {
    const auto& item = batch.items[b];
    detail::check_item(item, spec, student.vocab_size());
    std::size_t len = 0;
    for (TokenId t : item.target) len += t != batch.pad;
    if (len == 0) throw InputError("loss item has no unmasked positions");
    const double w = inv_b / static_cast<double>(len);
    std::fill(scratch.begin(), scratch.end(), 0.0);
    double seq_loss = 0.0;
    for (std::size_t i = 0; i < item.target.size(); ++i) {
      if (item.target[i] == batch.pad) continue;
      auto act = student.forward(student.context_window(
          item.prompt, std::span(item.target).first(i)));
      const auto s = softmax_with_temperature(act.logits, 1.0);
      const double l = detail::position_loss_grad(
          spec, act.logits, s, item.target[i],
          spec.kind == LossKind::divergence ? &item.teacher[i] : nullptr,
          dlogits);
      if (!std::isfinite(l))
        throw NumericalError("non-finite loss at batch item " +
                             std::to_string(b) + ", position " +
                             std::to_string(i));
      seq_loss += l;
      for (double& d : dlogits) d *= w;
      student.backward(act, dlogits, scratch);
    }
    out.loss += seq_loss / static_cast<double>(len) * inv_b;
    for (std::size_t k = 0; k < scratch.size(); ++k)
      out.grads.values[k] += scratch[k];
  }
  if (!std::isfinite(out.loss)) throw NumericalError("non-finite batch loss");
  if (!out.grads.all_finite()) throw NumericalError("non-finite gradient");
  return out;
}

/// Forward-only loss, evaluated from probabilities through the divergence
/// module (the route the finite-difference oracle perturbs).
inline double batch_loss(const NeuralLM& student, const LossBatch& batch,
                         const LossSpec& spec) {
  if (batch.items.empty()) throw InputError("empty loss batch");
  double total = 0.0;
  for (const auto& item : batch.items) {
    detail::check_item(item, spec, student.vocab_size());
    std::vector<Distribution> teacher, stud;
    double nll = 0.0;
    std::size_t len = 0;
    for (std::size_t i = 0; i < item.target.size(); ++i) {
      if (item.target[i] == batch.pad) continue;
      const auto s = softmax_with_temperature(
          student.next_logits(item.prompt, std::span(item.target).first(i)),
          1.0);
      ++len;
      if (spec.kind == LossKind::nll) {
        nll -= std::log(s[static_cast<std::size_t>(item.target[i])]);
      } else {
        teacher.push_back(item.teacher[i]);
        stud.push_back(s);
      }
    }
    if (len == 0) throw InputError("loss item has no unmasked positions");
    total += spec.kind == LossKind::nll
                 ? nll / static_cast<double>(len)
                 : sequence_divergence(teacher, stud, spec.divergence);
  }
  const double loss = total / static_cast<double>(batch.items.size());
  if (!std::isfinite(loss)) throw NumericalError("non-finite batch loss");
  return loss;
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
inline GradientSet finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be > 0");
  std::vector<double> probe(x.begin(), x.end());
  GradientSet g;
  g.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g.values[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline GradientSet finite_diff_grad(const NeuralLM& student,
                                    const LossBatch& batch,
                                    const LossSpec& spec, double h) {
  NeuralLM probe = student;
  probe.set_trainable(true);
  return finite_diff_grad(
      [&](std::span<const double> theta) {
        auto p = probe.mutable_params();
        std::copy(theta.begin(), theta.end(), p.begin());
        return batch_loss(probe, batch, spec);
      },
      student.params(), h);
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
inline double max_relative_error(std::span<const double> a,
                                 std::span<const double> b,
                                 double floor = 1e-6) {
  if (a.size() != b.size()) throw InternalError("gradient size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace skd
