// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "skd/eval.hpp"
#include "scripted_lm.hpp"

namespace skd {
namespace {

using fixtures::fixed_model;
using fixtures::log_probs;
using fixtures::ScriptedLM;

TEST(ExactModelKl, TeacherAgainstItselfIsZero) {
  const auto spec = make_random_markov_spec(markov_vocabulary(13), {}, 3);
  const TabularMarkovLM t(spec);
  EXPECT_NEAR(exact_model_kl(t, t, 4), 0.0, 1e-10);
}

TEST(ExactModelKl, UniformStudentOnDeterministicChain) {
  const auto v = markov_vocabulary(1);  // a ^ $ _
  const TabularMarkovLM teacher(MarkovSpec::constant(v, 2, v.id_of('a')));
  // Uniform over the full vocabulary: one enumerated prefix, KL = ln |V|.
  const auto uniform = fixed_model({0.25, 0.25, 0.25, 0.25});
  EXPECT_NEAR(exact_model_kl(uniform, teacher, 1), std::log(4.0), 1e-12);
  // Uniform over two tokens, one of them the chain's continuation: ln 2.
  const auto two = fixed_model({0.5, 0.0, 0.5, 0.0});
  EXPECT_NEAR(exact_model_kl(two, teacher, 1), std::log(2.0), 1e-12);
  // Each further position adds the same term along the single path.
  EXPECT_NEAR(exact_model_kl(two, teacher, 3), 3.0 * std::log(2.0), 1e-12);
}

TEST(ExactModelKl, HorizonGuard) {
  const auto spec = make_random_markov_spec(markov_vocabulary(13), {}, 3);
  const TabularMarkovLM t(spec);
  EXPECT_THROW(exact_model_kl(t, t, 5), ConfigError);  // 16^5 > 1e6
  EXPECT_THROW(exact_model_kl(t, t, 0), ConfigError);
}

TEST(ExactModelKl, MatchesMonteCarlo) {
  const auto spec = make_random_markov_spec(markov_vocabulary(13), {}, 5);
  const TabularMarkovLM teacher(spec);
  const auto student = NeuralLM::random({16, 4, 8, 16}, 13, 6, 1.0);
  const double exact = exact_model_kl(student, teacher, 4);
  const auto mc = monte_carlo_model_kl(student, teacher, 4, 50000, 7);
  EXPECT_GT(exact, 0.0);
  EXPECT_LT(std::abs(exact - mc.mean), 3.0 * mc.standard_error)
      << exact << " vs " << mc.mean << " +- " << mc.standard_error;
}

/// Greedy-decodes the sum for "a+b=" prompts.
ScriptedLM arith_oracle(const Vocabulary& v) {
  return ScriptedLM(v.size(), [v](std::span<const TokenId> prompt,
                                  std::span<const TokenId> prefix) {
    const auto text = v.decode(prompt);
    const auto plus = text.find('+');
    const int sum = std::stoi(text.substr(0, plus)) +
                    std::stoi(text.substr(plus + 1, text.size() - plus - 2));
    const auto answer = std::to_string(sum);
    std::vector<double> p(v.size(), 0.0);
    if (prefix.size() < answer.size())
      p[static_cast<std::size_t>(v.id_of(answer[prefix.size()]))] = 1.0;
    else
      p[static_cast<std::size_t>(v.eos())] = 1.0;
    return log_probs(p);
  });
}

TEST(TaskAccuracy, OracleScoresOneAndEosScoresZero) {
  const auto c = gen_arith_corpus(99, 300, 4);
  const auto oracle = arith_oracle(c.vocab);
  const auto r = task_accuracy(oracle, c);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.n_examples, 300u);
  EXPECT_EQ(r.decode, "greedy");
  std::vector<double> eos(c.vocab.size(), 0.01);
  eos[static_cast<std::size_t>(c.vocab.eos())] = 1.0;
  EXPECT_EQ(task_accuracy(fixed_model(eos), c).value, 0.0);
}

TEST(TaskAccuracy, DeterministicAndInRange) {
  const auto c = gen_reverse_corpus({1, 4}, 100, 2);
  const auto m = NeuralLM::random({c.vocab.size(), 4, 4, 8}, c.vocab.bos(), 1, 3.0);
  const auto a = task_accuracy(m, c), b = task_accuracy(m, c);
  EXPECT_EQ(a.value, b.value);
  EXPECT_GE(a.value, 0.0);
  EXPECT_LE(a.value, 1.0);
  const auto markov = gen_markov_corpus(
      make_random_markov_spec(markov_vocabulary(13), {}, 1), 5, {2, 6}, 1);
  EXPECT_THROW(task_accuracy(m, markov), ConfigError);
}

Trajectory with_flags(std::vector<Provenance> f) {
  Trajectory t;
  t.provenance = std::move(f);
  t.tokens.assign(t.provenance.size(), 0);
  return t;
}

TEST(AcceptanceRate, Examples) {
  using P = Provenance;
  const std::vector<Trajectory> all{with_flags({P::student_accepted, P::student_accepted})};
  EXPECT_EQ(acceptance_rate(all), 1.0);
  const std::vector<Trajectory> alt{
      with_flags({P::student_accepted, P::teacher_resampled, P::student_accepted,
                  P::teacher_resampled, P::plain})};
  EXPECT_EQ(acceptance_rate(alt), 0.5);
  const std::vector<Trajectory> none{with_flags({P::plain})};
  EXPECT_FALSE(acceptance_rate(none).has_value());

  const auto s = NeuralLM::random({16, 2, 4, 4}, 13, 1, 2.0);
  const auto t = NeuralLM::random({16, 2, 4, 4}, 13, 2, 2.0);
  SkdConfig cfg;
  cfg.top_k_accept = 0;
  std::vector<Trajectory> trs;
  for (std::uint64_t k = 0; k < 20; ++k)
    trs.push_back(skd_interleaved_sample(s, t, TokenSeq{1}, cfg, {0, 0, k}, 14));
  EXPECT_EQ(acceptance_rate(trs), 0.0);
}

TEST(SpecdecBenchmark, IdenticalModelsReachCeiling) {
  // No EOS mass, so every block is full.
  const auto m = fixed_model({0.3, 0.3, 0.4, 0.0});
  SamplerConfig cfg;
  cfg.max_len = 24;
  const std::vector<TokenSeq> prompts{{0}, {1, 2}};
  for (std::size_t gamma : {1u, 3u, 5u}) {
    const auto r = specdec_benchmark(m, m, prompts, gamma, 10, cfg, 1, 3);
    EXPECT_EQ(r.acceptance_ratio, 1.0);
    EXPECT_EQ(r.speedup_estimate, static_cast<double>(gamma + 1));
    EXPECT_EQ(r.tokens_per_target_call, static_cast<double>(gamma + 1));
  }
}

TEST(SpecdecBenchmark, UniformDraftAcceptanceIsOverlapMass) {
  // Expected acceptance per proposal: sum_y min(p(y), q(y)).
  const std::vector<double> p{0.25, 0.25, 0.25, 0.25};
  const std::vector<double> q{0.97, 0.01, 0.01, 0.01};
  double overlap = 0.0;
  for (std::size_t i = 0; i < 4; ++i) overlap += std::min(p[i], q[i]);
  SamplerConfig cfg;
  cfg.max_len = 1;
  const std::vector<TokenSeq> prompts{{0}};
  const auto r = specdec_benchmark(fixed_model(p), fixed_model(q), prompts, 1,
                                   40000, cfg, 2, 3);
  EXPECT_NEAR(r.acceptance_ratio, overlap, 0.01);
  const auto j = r.to_json();
  EXPECT_EQ(j.at("proposed").get<std::size_t>(), 40000u);
}

}  // namespace
}  // namespace skd
