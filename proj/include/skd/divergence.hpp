// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skd/distribution.hpp"
#include "skd/error.hpp"

namespace skd {

enum class DivergenceKind { forward_kl, reverse_kl, jsd, tv };

inline std::string to_string(DivergenceKind k) {
  switch (k) {
    case DivergenceKind::forward_kl: return "forward_kl";
    case DivergenceKind::reverse_kl: return "reverse_kl";
    case DivergenceKind::jsd: return "jsd";
    case DivergenceKind::tv: return "tv";
  }
  return "?";
}

inline DivergenceKind parse_divergence(std::string_view s) {
  if (s == "forward_kl" || s == "kl") return DivergenceKind::forward_kl;
  if (s == "reverse_kl") return DivergenceKind::reverse_kl;
  if (s == "jsd") return DivergenceKind::jsd;
  if (s == "tv") return DivergenceKind::tv;
  throw ConfigError("unknown divergence '" + std::string(s) + "'");
}

inline constexpr double kDefaultEpsilon = 1e-12;

struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::forward_kl;
  double epsilon_floor = kDefaultEpsilon;

  void validate() const {
    if (!(epsilon_floor >= 1e-15 && epsilon_floor <= 1e-6))
      throw ConfigError("epsilon_floor must be in [1e-15, 1e-6]");
  }
};

namespace detail {
inline void check_same_length(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size())
    throw InputError("distribution length mismatch: " +
                     std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
}
}  // namespace detail

/// sum_c P(c) (log P(c) - log max(Q(c), eps)); P(c) = 0 terms vanish.
inline double kl(const Distribution& p, const Distribution& q,
                 double eps = kDefaultEpsilon) {
  detail::check_same_length(p, q);
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0) continue;
    s += p[c] * (std::log(p[c]) - std::log(std::max(q[c], eps)));
  }
  return std::max(s, 0.0);
}

inline double reverse_kl(const Distribution& p, const Distribution& q,
                         double eps = kDefaultEpsilon) {
  return kl(q, p, eps);
}

/// 0.5 KL(P||M) + 0.5 KL(Q||M), M = (P + Q) / 2. M > 0 wherever a term is
/// nonzero, so no clamp is needed.
inline double jsd(const Distribution& p, const Distribution& q) {
  detail::check_same_length(p, q);
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double m = 0.5 * (p[c] + q[c]);
    if (p[c] > 0.0) s += 0.5 * p[c] * std::log(p[c] / m);
    if (q[c] > 0.0) s += 0.5 * q[c] * std::log(q[c] / m);
  }
  return std::clamp(s, 0.0, std::log(2.0));
}

inline double tv(const Distribution& p, const Distribution& q) {
  detail::check_same_length(p, q);
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) s += std::abs(p[c] - q[c]);
  return std::min(0.5 * s, 1.0);
}

/// D(teacher || student) for the selected kind.
inline double divergence(const DivergenceSpec& spec, const Distribution& teacher,
                         const Distribution& student) {
  switch (spec.kind) {
    case DivergenceKind::forward_kl:
      return kl(teacher, student, spec.epsilon_floor);
    case DivergenceKind::reverse_kl:
      return reverse_kl(teacher, student, spec.epsilon_floor);
    case DivergenceKind::jsd: return jsd(teacher, student);
    case DivergenceKind::tv: return tv(teacher, student);
  }
  throw InternalError("unhandled divergence kind");
}

/// (1 / L_y) sum_i D(teacher_i || student_i).
inline double sequence_divergence(std::span<const Distribution> teacher,
                                  std::span<const Distribution> student,
                                  const DivergenceSpec& spec) {
  if (teacher.size() != student.size())
    throw InputError("sequence_divergence: length mismatch");
  if (teacher.empty()) throw InputError("sequence_divergence: empty sequence");
  double s = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i)
    s += divergence(spec, teacher[i], student[i]);
  return s / static_cast<double>(teacher.size());
}

}  // namespace skd
