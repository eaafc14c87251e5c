// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skd/error.hpp"

namespace skd {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Pre-softmax scores over the vocabulary.
struct Logits {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

/// Probability vector over the vocabulary. Entries in [0, 1], sum to 1.
struct Distribution {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  bool operator==(const Distribution&) const = default;
};

inline constexpr double kSumTolerance = 1e-9;

inline bool is_valid_distribution(const Distribution& d,
                                  double tol = kSumTolerance) {
  double sum = 0.0;
  for (double p : d.probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0 + tol) return false;
    sum += p;
  }
  return !d.probs.empty() && std::abs(sum - 1.0) <= tol;
}

/// Descending order by score, ties by ascending id. The one ranking rule used
/// by greedy decoding, top-k, top-p and top-K acceptance.
inline std::vector<TokenId> rank_order(std::span<const double> scores) {
  std::vector<TokenId> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    return scores[a] > scores[b];
  });
  return order;
}

/// Rank of `token` under `scores` (0 = best), same tie rule as rank_order.
inline std::size_t rank_of(std::span<const double> scores, TokenId token) {
  const double s = scores[token];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && static_cast<TokenId>(j) < token))
      ++rank;
  }
  return rank;
}

inline TokenId argmax(std::span<const double> scores) {
  TokenId best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = static_cast<TokenId>(j);
  return best;
}

/// probs_i = exp(l_i / t) / sum_j exp(l_j / t), max-subtracted.
inline Distribution softmax_with_temperature(const Logits& logits, double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw ConfigError("softmax temperature must be > 0, got " +
                      std::to_string(t));
  if (logits.values.empty()) throw InputError("softmax of empty logits");
  const double top =
      *std::max_element(logits.values.begin(), logits.values.end());
  Distribution d;
  d.probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.probs[i] = std::exp((logits[i] - top) / t);
    z += d.probs[i];
  }
  for (double& p : d.probs) p /= z;
  return d;
}

/// log softmax at t = 1, for loss-side computations.
inline std::vector<double> log_softmax(const Logits& logits) {
  const double top =
      *std::max_element(logits.values.begin(), logits.values.end());
  double z = 0.0;
  for (double l : logits.values) z += std::exp(l - top);
  const double lz = top + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

namespace detail {

inline Distribution keep_renormalized(const Distribution& dist,
                                      std::span<const TokenId> keep) {
  Distribution out;
  out.probs.assign(dist.size(), 0.0);
  double mass = 0.0;
  for (TokenId id : keep) mass += dist[id];
  if (!(mass > 0.0)) throw InputError("truncation kept zero probability mass");
  for (TokenId id : keep) out.probs[id] = dist[id] / mass;
  return out;
}

}  // namespace detail

/// Zero all but the k most probable tokens (ties by ascending id), then
/// renormalize. k == |V| returns the input unchanged.
inline Distribution truncate_top_k(const Distribution& dist, std::size_t k) {
  if (k < 1 || k > dist.size())
    throw ConfigError("top-k must be in [1, " + std::to_string(dist.size()) +
                      "], got " + std::to_string(k));
  if (k == dist.size()) return dist;
  const auto order = rank_order(dist.probs);
  return detail::keep_renormalized(dist, std::span(order).first(k));
}

/// Smallest descending-probability prefix with cumulative mass >= p, then
/// renormalize. p == 1 returns the input unchanged.
inline Distribution truncate_top_p(const Distribution& dist, double p) {
  if (!(p > 0.0 && p <= 1.0))
    throw ConfigError("top-p must be in (0, 1], got " + std::to_string(p));
  if (p == 1.0) return dist;
  const auto order = rank_order(dist.probs);
  double cum = 0.0;
  std::size_t n = 0;
  while (n < order.size()) {
    cum += dist[order[n]];
    ++n;
    if (cum >= p) break;
  }
  return detail::keep_renormalized(dist, std::span(order).first(n));
}

/// Inverse-CDF draw with u in [0, 1). Never returns a zero-mass token.
inline TokenId draw(const Distribution& dist, double u) {
  double total = 0.0;
  for (double p : dist.probs) total += p;
  const double target = u * total;
  double cum = 0.0;
  TokenId last_nonzero = -1;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last_nonzero = static_cast<TokenId>(i);
    cum += dist[i];
    if (target < cum) return last_nonzero;
  }
  if (last_nonzero < 0) throw InternalError("draw from an all-zero vector");
  return last_nonzero;
}

}  // namespace skd
