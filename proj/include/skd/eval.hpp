// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skd/corpus.hpp"
#include "skd/distribution.hpp"
#include "skd/divergence.hpp"
#include "skd/lm.hpp"
#include "skd/sampler.hpp"

namespace skd {

// ---------------------------------------------------------------------------
// Exact and Monte-Carlo model KL against a tabular teacher
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxEnumeration = 1'000'000;

namespace detail {

/// Visits every teacher-reachable (prompt, response prefix) pair with
/// response prefix length < horizon, passing its teacher probability.
/// Prompts are the chain's first `order` tokens from the all-BOS context.
inline void enumerate_prefixes(
    const TabularMarkovLM& teacher, std::size_t horizon,
    const std::function<void(const TokenSeq&, const TokenSeq&, double,
                             const Distribution&)>& visit) {
  const auto& spec = teacher.spec();
  const TokenId eos = spec.vocab().eos();
  const std::size_t order = spec.order();
  const std::size_t v = spec.vocab().size();
  TokenSeq prompt, prefix;

  std::function<void(double)> response = [&](double w) {
    const auto row = spec.row_after(detail::concat(prompt, prefix));
    const Distribution t{{row.begin(), row.end()}};
    visit(prompt, prefix, w, t);
    if (prefix.size() + 1 >= horizon) return;
    for (std::size_t y = 0; y < v; ++y) {
      if (!(t[y] > 0.0) || static_cast<TokenId>(y) == eos) continue;
      prefix.push_back(static_cast<TokenId>(y));
      response(w * t[y]);
      prefix.pop_back();
    }
  };
  std::function<void(double)> prompts = [&](double w) {
    if (prompt.size() == order) {
      response(w);
      return;
    }
    const auto row = spec.row_after(prompt);
    for (std::size_t y = 0; y < v; ++y) {
      if (!(row[y] > 0.0) || static_cast<TokenId>(y) == eos) continue;
      prompt.push_back(static_cast<TokenId>(y));
      prompts(w * row[y]);
      prompt.pop_back();
    }
  };
  prompts(1.0);
}

}  // namespace detail

/// sum over teacher-reachable response prefixes u with |u| < horizon of
/// Pr_teacher(prompt, u) * KL(teacher(.|u) || student(.|u)), by exhaustive
/// enumeration. Equals the expected summed per-position forward KL over the
/// first `horizon` response positions of teacher-generated sequences.
inline double exact_model_kl(const LanguageModel& student,
                             const TabularMarkovLM& teacher,
                             std::size_t horizon) {
  if (student.vocab_size() != teacher.vocab_size())
    throw ConfigError("student and teacher vocabularies differ");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  double reach = 1.0;
  for (std::size_t i = 0; i < horizon; ++i) {
    reach *= static_cast<double>(teacher.vocab_size());
    if (reach > static_cast<double>(kMaxEnumeration))
      throw ConfigError("exact_model_kl: |V|^horizon exceeds 1e6");
  }
  double total = 0.0;
  detail::enumerate_prefixes(
      teacher, horizon,
      [&](const TokenSeq& prompt, const TokenSeq& prefix, double w,
          const Distribution& t) {
        const auto s =
            softmax_with_temperature(student.next_logits(prompt, prefix), 1.0);
        total += w * kl(t, s);
      });
  return total;
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// Same quantity as exact_model_kl from `n` sequences sampled from the
/// teacher chain.
inline MonteCarloEstimate monte_carlo_model_kl(const LanguageModel& student,
                                               const TabularMarkovLM& teacher,
                                               std::size_t horizon,
                                               std::size_t n,
                                               std::uint64_t seed) {
  const auto& spec = teacher.spec();
  const TokenId eos = spec.vocab().eos();
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    RngCursor rng(RngStream(seed, "mc-model-kl", k));
    TokenSeq prompt;
    while (prompt.size() < spec.order()) {
      const auto row = spec.row_after(prompt);
      prompt.push_back(draw(Distribution{{row.begin(), row.end()}}, rng.uniform()));
    }
    TokenSeq prefix;
    double path = 0.0;
    for (std::size_t i = 0; i < horizon; ++i) {
      const auto row = spec.row_after(detail::concat(prompt, prefix));
      const Distribution t{{row.begin(), row.end()}};
      path += kl(t, softmax_with_temperature(
                        student.next_logits(prompt, prefix), 1.0));
      const TokenId y = draw(t, rng.uniform());
      if (y == eos) break;
      prefix.push_back(y);
    }
    sum += path;
    sum2 += path * path;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = std::max(0.0, sum2 / nn - mean * mean) * nn / (nn - 1.0);
  return {mean, std::sqrt(var / nn)};
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  std::size_t n_examples = 0;
  std::string decode;

  nlohmann::json to_json() const {
    return {{"task", task}, {"metric", metric}, {"value", value},
            {"n_examples", n_examples}, {"decode", decode}};
  }
};

struct SpeedupReport {
  double acceptance_ratio = 0.0;
  double tokens_per_target_call = 0.0;
  double speedup_estimate = 0.0;
  AcceptanceStats stats;

  nlohmann::json to_json() const {
    return {{"acceptance_ratio", acceptance_ratio},
            {"tokens_per_target_call", tokens_per_target_call},
            {"speedup_estimate", speedup_estimate},
            {"proposed", stats.proposed},
            {"accepted", stats.accepted},
            {"target_calls", stats.target_calls},
            {"emitted_tokens", stats.emitted_tokens}};
  }
};

/// Greedy decoding, exact match of the response body and its EOS.
inline EvalReport task_accuracy(const LanguageModel& model,
                                const Corpus& test) {
  if (test.task == Task::markov)
    throw ConfigError("task_accuracy needs an arith or reverse corpus");
  if (test.empty()) throw InputError("task_accuracy on an empty corpus");
  std::size_t correct = 0;
  const TokenId eos = test.vocab.eos();
  for (const auto& e : test.examples) {
    SamplerConfig greedy;
    greedy.temperature = 0.0;
    greedy.max_len = e.response.size();
    const auto tr = sample_autoregressive(model, e.prompt, greedy, {}, eos);
    correct += tr.tokens == e.response;
  }
  return {to_string(test.task), "exact_match_accuracy",
          static_cast<double>(correct) / static_cast<double>(test.size()),
          test.size(), "greedy"};
}

/// accepted / (accepted + resampled); plain tokens excluded. Absent when no
/// token carries either flag.
inline std::optional<double> acceptance_rate(
    std::span<const Trajectory> trajectories) {
  std::size_t acc = 0, rej = 0;
  for (const auto& tr : trajectories)
    for (Provenance p : tr.provenance) {
      acc += p == Provenance::student_accepted;
      rej += p == Provenance::teacher_resampled;
    }
  if (acc + rej == 0) return std::nullopt;
  return static_cast<double>(acc) / static_cast<double>(acc + rej);
}

/// Runs speculative decoding `n_runs` times per prompt and aggregates the
/// call-count speedup: emitted tokens per target call.
inline SpeedupReport specdec_benchmark(const LanguageModel& draft,
                                       const LanguageModel& target,
                                       std::span<const TokenSeq> prompts,
                                       std::size_t gamma, std::size_t n_runs,
                                       const SamplerConfig& cfg,
                                       std::uint64_t seed, TokenId eos) {
  SpeedupReport r;
  std::uint64_t seq = 0;
  for (std::size_t run = 0; run < n_runs; ++run)
    for (const auto& prompt : prompts) {
      const auto res = speculative_decode(draft, target, prompt, gamma, cfg,
                                          {seed, run, seq++}, eos);
      r.stats += res.stats;
    }
  r.acceptance_ratio = r.stats.proposed
                           ? static_cast<double>(r.stats.accepted) /
                                 static_cast<double>(r.stats.proposed)
                           : 0.0;
  r.tokens_per_target_call = r.stats.target_calls
                                 ? static_cast<double>(r.stats.emitted_tokens) /
                                       static_cast<double>(r.stats.target_calls)
                                 : 0.0;
  r.speedup_estimate = r.tokens_per_target_call;
  return r;
}

}  // namespace skd
