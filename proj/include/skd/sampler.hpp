// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skd/distribution.hpp"
#include "skd/error.hpp"
#include "skd/lm.hpp"
#include "skd/rng.hpp"

namespace skd {

inline constexpr const char* kStudentStream = "student";
inline constexpr const char* kTeacherStream = "teacher";

/// Decoding hyperparameters for one role. temperature == 0 means greedy.
struct SamplerConfig {
  double temperature = 1.0;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
  std::size_t max_len = 16;  // alpha
  std::string stream = kStudentStream;

  void validate(std::size_t vocab) const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature))
      throw ConfigError("sampler temperature must be >= 0");
    if (top_k && top_p)
      throw ConfigError("at most one of top_k / top_p may be set per role");
    if (top_k && (*top_k < 1 || *top_k > vocab))
      throw ConfigError("top_k out of range");
    if (top_p && !(*top_p > 0.0 && *top_p <= 1.0))
      throw ConfigError("top_p out of range");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
  }
};

/// Identifies one trajectory inside a run; combined with a stream name it
/// keys every random draw.
struct TrajectoryKey {
  std::uint64_t run_seed = 0;
  std::uint64_t step = 0;
  std::uint64_t sequence = 0;

  RngStream stream(const std::string& name) const {
    return RngStream(run_seed, name, step, sequence);
  }
};

enum class Provenance : std::uint8_t { plain, student_accepted, teacher_resampled };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::plain: return "plain";
    case Provenance::student_accepted: return "student_accepted";
    case Provenance::teacher_resampled: return "teacher_resampled";
  }
  return "?";
}

struct Trajectory {
  TokenSeq prompt;
  TokenSeq tokens;
  std::vector<Provenance> provenance;
  std::vector<double> logprob;     // under the distribution that drew it
  std::vector<int> teacher_rank;   // -1 when no teacher was consulted

  bool operator==(const Trajectory&) const = default;
};

struct AcceptanceStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  std::size_t target_calls = 0;
  std::size_t emitted_tokens = 0;

  AcceptanceStats& operator+=(const AcceptanceStats& o) {
    proposed += o.proposed;
    accepted += o.accepted;
    target_calls += o.target_calls;
    emitted_tokens += o.emitted_tokens;
    return *this;
  }
};

/// Temperature (or greedy one-hot), then optional top-k / top-p.
inline Distribution shape_distribution(const Logits& logits,
                                       const SamplerConfig& cfg) {
  if (cfg.temperature == 0.0) {
    Distribution d;
    d.probs.assign(logits.size(), 0.0);
    d.probs[static_cast<std::size_t>(argmax(logits.values))] = 1.0;
    return d;
  }
  Distribution d = softmax_with_temperature(logits, cfg.temperature);
  if (cfg.top_k) return truncate_top_k(d, *cfg.top_k);
  if (cfg.top_p) return truncate_top_p(d, *cfg.top_p);
  return d;
}

namespace detail {

inline TokenSeq concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  TokenSeq out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// Draw for `position` of a trajectory from `model` under `cfg`; the
/// uniform comes from lane 0 of `rng` at that position.
inline std::pair<TokenId, double> draw_token(const LanguageModel& model,
                                             std::span<const TokenId> prompt,
                                             std::span<const TokenId> prefix,
                                             const SamplerConfig& cfg,
                                             const RngStream& rng) {
  const auto d = shape_distribution(model.next_logits(prompt, prefix), cfg);
  const TokenId t = draw(d, rng.uniform(prefix.size()));
  return {t, std::log(d[static_cast<std::size_t>(t)])};
}

}  // namespace detail

/// Plain decoding until EOS or cfg.max_len tokens.
inline Trajectory sample_autoregressive(const LanguageModel& model,
                                        std::span<const TokenId> prompt,
                                        const SamplerConfig& cfg,
                                        const TrajectoryKey& key,
                                        TokenId eos) {
  cfg.validate(model.vocab_size());
  const RngStream rng = key.stream(cfg.stream);
  Trajectory tr;
  tr.prompt.assign(prompt.begin(), prompt.end());
  while (tr.tokens.size() < cfg.max_len) {
    const auto [tok, lp] =
        detail::draw_token(model, prompt, tr.tokens, cfg, rng);
    tr.tokens.push_back(tok);
    tr.provenance.push_back(Provenance::plain);
    tr.logprob.push_back(lp);
    tr.teacher_rank.push_back(-1);
    if (tok == eos) break;
  }
  return tr;
}

/// True iff `token` ranks < K under the raw teacher logits (descending,
/// ties by ascending id).
inline bool topk_accept(TokenId token, const Logits& teacher_logits,
                        std::size_t k) {
  if (k == 0) return false;
  if (k >= teacher_logits.size()) return true;
  return rank_of(teacher_logits.values, token) < k;
}

struct SkdConfig {
  std::size_t top_k_accept = 25;  // K
  std::size_t gamma = 5;
  SamplerConfig student_sampler{0.5, std::nullopt, 0.5, 16, kStudentStream};
  SamplerConfig teacher_resample{0.2, std::nullopt, 1.0, 16, kTeacherStream};

  void validate(std::size_t vocab) const {
    if (top_k_accept > vocab) throw ConfigError("K must be in [0, |V|]");
    if (gamma < 1) throw ConfigError("gamma must be >= 1");
    student_sampler.validate(vocab);
    teacher_resample.validate(vocab);
  }
};

/// Default K for a vocabulary: 25, scaled to ceil(0.4 |V|) below 64 tokens.
inline std::size_t default_accept_k(std::size_t vocab) {
  if (vocab >= 64) return 25;
  return static_cast<std::size_t>(std::ceil(0.4 * static_cast<double>(vocab)));
}

/// Interleaved student/teacher sampling. The student proposes blocks of up
/// to gamma tokens; the teacher checks them in order. The first proposal
/// outside the teacher's top K is replaced by a teacher draw and the rest of
/// the block is dropped; the next block starts after the replacement.
/// Length bound alpha = cfg.student_sampler.max_len.
inline Trajectory skd_interleaved_sample(const LanguageModel& student,
                                         const LanguageModel& teacher,
                                         std::span<const TokenId> prompt,
                                         const SkdConfig& cfg,
                                         const TrajectoryKey& key,
                                         TokenId eos,
                                         AcceptanceStats* stats = nullptr) {
  if (student.vocab_size() != teacher.vocab_size())
    throw ConfigError("student and teacher vocabularies differ");
  cfg.validate(student.vocab_size());
  const RngStream srng = key.stream(cfg.student_sampler.stream);
  const RngStream trng = key.stream(cfg.teacher_resample.stream);
  const std::size_t alpha = cfg.student_sampler.max_len;

  Trajectory tr;
  tr.prompt.assign(prompt.begin(), prompt.end());
  bool ended = false;
  while (!ended && tr.tokens.size() < alpha) {
    // Student proposal block.
    TokenSeq block;
    std::vector<double> block_lp;
    TokenSeq ctx = tr.tokens;
    while (block.size() < cfg.gamma && ctx.size() < alpha) {
      const auto [tok, lp] =
          detail::draw_token(student, prompt, ctx, cfg.student_sampler, srng);
      block.push_back(tok);
      block_lp.push_back(lp);
      ctx.push_back(tok);
      if (tok == eos) break;
    }
    // Teacher verification, in order.
    for (std::size_t j = 0; j < block.size(); ++j) {
      const Logits tl = teacher.next_logits(prompt, tr.tokens);
      if (stats) ++stats->proposed;
      if (topk_accept(block[j], tl, cfg.top_k_accept)) {
        if (stats) ++stats->accepted;
        tr.teacher_rank.push_back(
            static_cast<int>(rank_of(tl.values, block[j])));
        tr.tokens.push_back(block[j]);
        tr.provenance.push_back(Provenance::student_accepted);
        tr.logprob.push_back(block_lp[j]);
        if (block[j] == eos) ended = true;
        continue;
      }
      const auto d = shape_distribution(tl, cfg.teacher_resample);
      const TokenId rep = draw(d, trng.uniform(tr.tokens.size()));
      tr.teacher_rank.push_back(static_cast<int>(rank_of(tl.values, rep)));
      tr.tokens.push_back(rep);
      tr.provenance.push_back(Provenance::teacher_resampled);
      tr.logprob.push_back(std::log(d[static_cast<std::size_t>(rep)]));
      if (rep == eos) ended = true;
      break;
    }
  }
  if (stats) stats->emitted_tokens += tr.tokens.size();
  return tr;
}

struct SpecDecodeResult {
  Trajectory trajectory;
  AcceptanceStats stats;
};

/// Lossless speculative decoding: accept a draft token y with probability
/// min(1, q(y) / p(y)); on the first rejection emit from
/// normalize(max(0, q - p)); after a fully accepted block emit a bonus token
/// from q. One target call per block. Both models are shaped by `cfg`.
inline SpecDecodeResult speculative_decode(const LanguageModel& draft,
                                           const LanguageModel& target,
                                           std::span<const TokenId> prompt,
                                           std::size_t gamma,
                                           const SamplerConfig& cfg,
                                           const TrajectoryKey& key,
                                           TokenId eos) {
  if (draft.vocab_size() != target.vocab_size())
    throw ConfigError("draft and target vocabularies differ");
  if (gamma < 1) throw ConfigError("gamma must be >= 1");
  cfg.validate(draft.vocab_size());
  const RngStream rng = key.stream(cfg.stream);
  constexpr std::uint64_t kDraftLane = 0, kAcceptLane = 1, kEmitLane = 2;

  SpecDecodeResult out;
  Trajectory& tr = out.trajectory;
  tr.prompt.assign(prompt.begin(), prompt.end());
  const std::size_t alpha = cfg.max_len;
  bool ended = false;

  auto emit = [&](TokenId t, double lp, Provenance pv) {
    tr.tokens.push_back(t);
    tr.provenance.push_back(pv);
    tr.logprob.push_back(lp);
    tr.teacher_rank.push_back(-1);
    if (t == eos) ended = true;
  };

  while (!ended && tr.tokens.size() < alpha) {
    TokenSeq block;
    std::vector<Distribution> p;
    TokenSeq ctx = tr.tokens;
    while (block.size() < gamma && ctx.size() < alpha) {
      auto d = shape_distribution(draft.next_logits(prompt, ctx), cfg);
      const TokenId t = draw(d, rng.uniform(ctx.size(), kDraftLane));
      block.push_back(t);
      p.push_back(std::move(d));
      ctx.push_back(t);
      if (t == eos) break;
    }
    ++out.stats.target_calls;
    bool all_accepted = true;
    for (std::size_t j = 0; j < block.size(); ++j) {
      const std::size_t pos = tr.tokens.size();
      const auto q = shape_distribution(target.next_logits(prompt, tr.tokens), cfg);
      const auto y = static_cast<std::size_t>(block[j]);
      if (!(p[j][y] > 0.0))
        throw InternalError("draft proposed a zero-probability token");
      ++out.stats.proposed;
      const double ratio = q[y] / p[j][y];
      if (rng.uniform(pos, kAcceptLane) < std::min(1.0, ratio)) {
        ++out.stats.accepted;
        emit(block[j], std::log(q[y]), Provenance::student_accepted);
        if (ended) break;
        continue;
      }
      Distribution residual;
      residual.probs.resize(q.size());
      double mass = 0.0;
      for (std::size_t c = 0; c < q.size(); ++c) {
        residual.probs[c] = std::max(0.0, q[c] - p[j][c]);
        mass += residual.probs[c];
      }
      if (!(mass > 0.0)) residual = q;  // q == p up to rounding
      else
        for (double& r : residual.probs) r /= mass;
      const TokenId t = draw(residual, rng.uniform(pos, kEmitLane));
      emit(t, std::log(q[static_cast<std::size_t>(t)]),
           Provenance::teacher_resampled);
      all_accepted = false;
      break;
    }
    if (all_accepted && !ended && tr.tokens.size() < alpha) {
      const auto q = shape_distribution(target.next_logits(prompt, tr.tokens), cfg);
      const TokenId t = draw(q, rng.uniform(tr.tokens.size(), kEmitLane));
      emit(t, std::log(q[static_cast<std::size_t>(t)]), Provenance::plain);
    }
  }
  out.stats.emitted_tokens = tr.tokens.size();
  return out;
}

}  // namespace skd
