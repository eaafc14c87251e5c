// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "skd/corpus.hpp"
#include "skd/sampler.hpp"
#include "scripted_lm.hpp"

namespace skd {
namespace {

using fixtures::fixed_model;
using fixtures::log_probs;
using fixtures::ScriptedLM;
using fixtures::tv_counts;

constexpr TokenId kEos = 14;  // markov_vocabulary(13)

NeuralLM small_net(std::uint64_t seed) {
  return NeuralLM::random({16, 3, 6, 12}, 13, seed, 2.0);
}

TEST(Autoregressive, GreedyFollowsDeterministicChain) {
  const auto v = markov_vocabulary(4);  // abcd ^ $ _
  auto spec = MarkovSpec::constant(v, 1, v.id_of('b'));
  auto table = spec.table();
  // a -> c, c -> EOS; everything else -> b.
  const std::size_t n = v.size();
  auto set_row = [&](TokenId ctx, TokenId next) {
    for (std::size_t j = 0; j < n; ++j) table[static_cast<std::size_t>(ctx) * n + j] = 0.0;
    table[static_cast<std::size_t>(ctx) * n + static_cast<std::size_t>(next)] = 1.0;
  };
  set_row(v.id_of('a'), v.id_of('c'));
  set_row(v.id_of('c'), v.eos());
  const TabularMarkovLM lm(MarkovSpec(v, 1, table));
  SamplerConfig greedy;
  greedy.temperature = 0.0;
  const auto tr = sample_autoregressive(lm, TokenSeq{v.id_of('a')}, greedy, {}, v.eos());
  EXPECT_EQ(tr.tokens, (TokenSeq{v.id_of('c'), v.eos()}));
  EXPECT_EQ(tr.provenance.size(), 2u);
}

TEST(Autoregressive, GreedyTieGoesToLowestId) {
  const auto lm = fixed_model({0.1, 0.4, 0.4, 0.1});
  SamplerConfig greedy;
  greedy.temperature = 0.0;
  greedy.max_len = 3;
  const auto tr = sample_autoregressive(lm, {}, greedy, {}, 3);
  EXPECT_EQ(tr.tokens, (TokenSeq{1, 1, 1}));
}

TEST(Autoregressive, MonteCarloMatchesModel) {
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  const auto lm = fixed_model(p);
  SamplerConfig cfg;
  cfg.max_len = 1;
  std::vector<double> counts(4, 0.0);
  for (std::uint64_t k = 0; k < 100000; ++k)
    counts[static_cast<std::size_t>(
        sample_autoregressive(lm, {}, cfg, {5, 0, k}, 3).tokens[0])] += 1.0;
  EXPECT_LT(tv_counts(counts, {p}), 0.01);
}

TEST(Autoregressive, StopsAtEosOrLength) {
  const auto net = small_net(1);
  SamplerConfig cfg;
  cfg.max_len = 9;
  for (std::uint64_t k = 0; k < 300; ++k) {
    const auto tr = sample_autoregressive(net, TokenSeq{0, 1}, cfg, {1, 0, k}, kEos);
    ASSERT_LE(tr.tokens.size(), 9u);
    for (std::size_t i = 0; i + 1 < tr.tokens.size(); ++i) EXPECT_NE(tr.tokens[i], kEos);
    if (tr.tokens.size() < 9) {
      EXPECT_EQ(tr.tokens.back(), kEos);
    }
  }
}

TEST(Autoregressive, ConfigValidation) {
  const auto lm = fixed_model({0.4, 0.4, 0.1, 0.1});
  SamplerConfig both;
  both.top_k = 2;
  both.top_p = 0.5;
  EXPECT_THROW(sample_autoregressive(lm, {}, both, {}, 3), ConfigError);
  SamplerConfig zero_len;
  zero_len.max_len = 0;
  EXPECT_THROW(sample_autoregressive(lm, {}, zero_len, {}, 3), ConfigError);
}

TEST(TopkAccept, RankExamples) {
  const auto t = log_probs({0.5, 0.3, 0.15, 0.05});
  EXPECT_FALSE(topk_accept(2, t, 2));
  EXPECT_TRUE(topk_accept(0, t, 2));
  EXPECT_TRUE(topk_accept(1, t, 2));
  for (TokenId y = 0; y < 4; ++y) {
    EXPECT_TRUE(topk_accept(y, t, 4));
    EXPECT_FALSE(topk_accept(y, t, 0));
  }
  const Logits tied{{1.0, 1.0, 0.0}};
  EXPECT_TRUE(topk_accept(0, tied, 1));
  EXPECT_FALSE(topk_accept(1, tied, 1));
}

TEST(TopkAccept, InvariantToTemperature) {
  RngCursor rng(RngStream(2, "rank-temp"));
  for (int trial = 0; trial < 500; ++trial) {
    Logits l;
    for (int i = 0; i < 10; ++i) l.values.push_back(3.0 * rng.normal());
    const double t = 0.1 + 2.0 * rng.uniform();
    Logits scaled = l;
    for (double& x : scaled.values) x /= t;
    const auto y = static_cast<TokenId>(rng.below(10));
    for (std::size_t k = 0; k <= 10; ++k)
      EXPECT_EQ(topk_accept(y, l, k), topk_accept(y, scaled, k));
  }
}

SkdConfig skd_config(std::size_t k, std::size_t gamma = 5, std::size_t alpha = 12) {
  SkdConfig c;
  c.top_k_accept = k;
  c.gamma = gamma;
  c.student_sampler.max_len = alpha;
  c.teacher_resample.max_len = alpha;
  return c;
}

TEST(SkdSampler, FullKDegeneratesToStudentSampling) {
  const auto student = small_net(10), teacher = small_net(11);
  const auto cfg = skd_config(16);
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const TrajectoryKey key{77, k / 10, k % 10};
    const TokenSeq prompt{static_cast<TokenId>(k % 13), 2};
    const auto skd = skd_interleaved_sample(student, teacher, prompt, cfg, key, kEos);
    const auto ar = sample_autoregressive(student, prompt, cfg.student_sampler, key, kEos);
    ASSERT_EQ(skd.tokens, ar.tokens) << k;
    ASSERT_EQ(skd.logprob, ar.logprob);
    for (auto p : skd.provenance) EXPECT_EQ(p, Provenance::student_accepted);
  }
}

TEST(SkdSampler, ZeroKDegeneratesToTeacherSampling) {
  const auto student = small_net(20), teacher = small_net(21);
  const auto cfg = skd_config(0);
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const TrajectoryKey key{78, k % 7, k};
    const TokenSeq prompt{static_cast<TokenId>(k % 13)};
    const auto skd = skd_interleaved_sample(student, teacher, prompt, cfg, key, kEos);
    const auto ar = sample_autoregressive(teacher, prompt, cfg.teacher_resample, key, kEos);
    ASSERT_EQ(skd.tokens, ar.tokens) << k;
    ASSERT_EQ(skd.logprob, ar.logprob);
    for (auto p : skd.provenance) EXPECT_EQ(p, Provenance::teacher_resampled);
  }
}

TEST(SkdSampler, BlockRejectDiscardsRemainder) {
  // Student greedily proposes 0, 1, 0 ...; the teacher's top token is 0 at
  // position 0 and 3 at position 1.
  const auto student = ScriptedLM::by_position(4, [](std::size_t pos) {
    return pos % 2 == 0 ? Logits{{5.0, 0.0, 0.0, 0.0}} : Logits{{0.0, 5.0, 0.0, 0.0}};
  });
  const auto teacher = ScriptedLM::by_position(4, [](std::size_t pos) {
    return pos == 0 ? Logits{{5.0, 0.0, 1.0, 0.0}} : Logits{{0.0, 1.0, 0.0, 5.0}};
  });
  SkdConfig cfg = skd_config(1, 3, 2);
  cfg.student_sampler.temperature = 0.0;
  cfg.teacher_resample.temperature = 0.0;
  AcceptanceStats stats;
  const auto tr = skd_interleaved_sample(student, teacher, {}, cfg, {}, 2, &stats);
  EXPECT_EQ(tr.tokens, (TokenSeq{0, 3}));
  EXPECT_EQ(tr.provenance, (std::vector<Provenance>{Provenance::student_accepted,
                                                    Provenance::teacher_resampled}));
  EXPECT_EQ(stats.proposed, 2u);
  EXPECT_EQ(stats.accepted, 1u);
  EXPECT_EQ(tr.teacher_rank, (std::vector<int>{0, 0}));
}

TEST(SkdSampler, TrajectoryInvariants) {
  const auto student = small_net(30), teacher = small_net(31);
  for (std::size_t k : {1u, 3u, 6u, 12u}) {
    const auto cfg = skd_config(k, 5, 10);
    for (std::uint64_t s = 0; s < 200; ++s) {
      AcceptanceStats st;
      const TokenSeq prompt{static_cast<TokenId>(s % 13)};
      const auto tr = skd_interleaved_sample(student, teacher, prompt, cfg, {3, s, k}, kEos, &st);
      ASSERT_EQ(tr.provenance.size(), tr.tokens.size());
      ASSERT_LE(tr.tokens.size(), 10u);
      EXPECT_LE(st.accepted, st.proposed);
      for (std::size_t i = 0; i < tr.tokens.size(); ++i) {
        if (i + 1 < tr.tokens.size()) {
          EXPECT_NE(tr.tokens[i], kEos);
        }
        // Replay the rank from the recorded prefix.
        const auto tl = teacher.next_logits(prompt, std::span(tr.tokens).first(i));
        const auto rank = static_cast<int>(rank_of(tl.values, tr.tokens[i]));
        EXPECT_EQ(rank, tr.teacher_rank[i]);
        if (tr.provenance[i] == Provenance::student_accepted) {
          EXPECT_LT(rank, static_cast<int>(k));
        }
      }
    }
  }
}

TEST(SkdSampler, Validation) {
  const auto a = small_net(1);
  const NeuralLM b = NeuralLM::random({12, 2, 2, 2}, 9, 0);
  EXPECT_THROW(skd_interleaved_sample(a, b, {}, skd_config(3), {}, kEos), ConfigError);
  EXPECT_THROW(skd_interleaved_sample(a, a, {}, skd_config(17), {}, kEos), ConfigError);
  EXPECT_THROW(skd_interleaved_sample(a, a, {}, skd_config(3, 0), {}, kEos), ConfigError);
  EXPECT_EQ(default_accept_k(16), 7u);
  EXPECT_EQ(default_accept_k(64), 25u);
}

TEST(SpecDecode, IdenticalModelsAcceptEverything) {
  const auto m = small_net(40);
  SamplerConfig cfg;
  cfg.max_len = 12;
  AcceptanceStats total;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto r = speculative_decode(m, m, TokenSeq{1}, 5, cfg, {9, 0, s}, kEos);
    total += r.stats;
    EXPECT_GE(r.stats.emitted_tokens, r.stats.target_calls);
  }
  EXPECT_EQ(total.accepted, total.proposed);
  EXPECT_GT(total.proposed, 0u);
}

TEST(SpecDecode, AcceptanceProbabilityIsRatio) {
  // p(0) = 0.4, q(0) = 0.2 -> acceptance probability 0.5.
  const auto draft = fixed_model({0.4, 0.6}), target = fixed_model({0.2, 0.8});
  SamplerConfig cfg;
  cfg.max_len = 1;
  double proposed0 = 0, accepted0 = 0;
  for (std::uint64_t s = 0; s < 40000; ++s) {
    const auto r = speculative_decode(draft, target, {}, 1, cfg, {1, 0, s}, 1);
    const auto& tr = r.trajectory;
    // Token 0 emitted via acceptance, or proposal of 0 rejected.
    const bool drew0 = RngStream(1, cfg.stream, 0, s).uniform(0, 0) < 0.4;
    if (drew0) {
      proposed0 += 1;
      accepted0 += tr.provenance[0] == Provenance::student_accepted;
    }
  }
  EXPECT_NEAR(accepted0 / proposed0, 0.5, 0.015);
}

TEST(SpecDecode, FirstTokenMatchesTarget) {
  const std::vector<double> pd{0.3, 0.05, 0.05, 0.2, 0.1, 0.1, 0.1, 0.1};
  const std::vector<double> qd{0.05, 0.25, 0.1, 0.1, 0.3, 0.05, 0.1, 0.05};
  const auto draft = fixed_model(pd), target = fixed_model(qd);
  SamplerConfig cfg;
  cfg.max_len = 4;
  std::vector<double> counts(8, 0.0);
  for (std::uint64_t s = 0; s < 200000; ++s) {
    const auto r = speculative_decode(draft, target, {}, 3, cfg, {2, 0, s}, 7);
    counts[static_cast<std::size_t>(r.trajectory.tokens[0])] += 1.0;
  }
  EXPECT_LT(tv_counts(counts, {qd}), 0.01);
}

TEST(SpecDecode, OneTargetCallPerBlock) {
  const auto draft = small_net(50), target = small_net(51);
  SamplerConfig cfg;
  cfg.max_len = 16;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto r = speculative_decode(draft, target, TokenSeq{2}, 5, cfg, {4, 0, s}, kEos);
    EXPECT_LE(r.stats.accepted, r.stats.proposed);
    EXPECT_GE(r.stats.emitted_tokens, r.stats.target_calls);
    EXPECT_LE(r.stats.emitted_tokens, r.stats.target_calls * 6);
    EXPECT_EQ(r.stats.emitted_tokens, r.trajectory.tokens.size());
  }
}

}  // namespace
}  // namespace skd
