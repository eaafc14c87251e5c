// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "skd/distribution.hpp"
#include "skd/lm.hpp"

namespace skd {
namespace {

TEST(Softmax, SymmetricLogits) {
  const auto d = softmax_with_temperature({{0.0, 0.0}}, 1.0);
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 0.5);
}

TEST(Softmax, LogThreeGivesThreeQuarters) {
  // exp(ln 3) / (exp(ln 3) + 1) = 3 / 4
  const auto d = softmax_with_temperature({{std::log(3.0), 0.0}}, 1.0);
  EXPECT_NEAR(d[0], 0.75, 1e-15);
  EXPECT_NEAR(d[1], 0.25, 1e-15);
}

TEST(Softmax, LowTemperatureLimit) {
  const auto d = softmax_with_temperature({{10.0, 0.0}}, 0.01);
  EXPECT_GE(d[0], 1.0 - 1e-12);
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(softmax_with_temperature({{1.0, 2.0}}, 0.0), ConfigError);
  EXPECT_THROW(softmax_with_temperature({{1.0, 2.0}}, -1.0), ConfigError);
}

TEST(Softmax, ShiftInvariantAndRankPreserving) {
  RngCursor rng(RngStream(3, "softmax-prop"));
  for (int trial = 0; trial < 500; ++trial) {
    Logits l;
    for (int i = 0; i < 9; ++i) l.values.push_back(4.0 * rng.normal());
    const double t = 0.05 + 3.0 * rng.uniform();
    const double shift = 50.0 * rng.normal();
    Logits shifted = l;
    for (double& x : shifted.values) x += shift;
    const auto a = softmax_with_temperature(l, t);
    const auto b = softmax_with_temperature(shifted, t);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_TRUE(is_valid_distribution(a));
    // Exact ties after exp() can appear at extreme temperatures; compare
    // against strictly ordered logits only.
    const auto lo = rank_order(l.values);
    for (std::size_t i = 0; i + 1 < lo.size(); ++i)
      EXPECT_GE(a[lo[i]], a[lo[i + 1]]);
  }
}

TEST(TopK, RenormalizesKeptMass) {
  const auto d = truncate_top_k({{0.5, 0.3, 0.15, 0.05}}, 2);
  EXPECT_NEAR(d[0], 0.625, 1e-15);
  EXPECT_NEAR(d[1], 0.375, 1e-15);
  EXPECT_EQ(d[2], 0.0);
  EXPECT_EQ(d[3], 0.0);
}

TEST(TopK, FullVocabularyIsIdentityAndTiesGoToLowestId) {
  const Distribution d{{0.1, 0.2, 0.3, 0.4}};
  EXPECT_EQ(truncate_top_k(d, 4), d);
  const auto t = truncate_top_k({{0.25, 0.25, 0.25, 0.25}}, 1);
  EXPECT_EQ(t, (Distribution{{1.0, 0.0, 0.0, 0.0}}));
  EXPECT_THROW(truncate_top_k(d, 0), ConfigError);
  EXPECT_THROW(truncate_top_k(d, 5), ConfigError);
}

TEST(TopP, Examples) {
  const Distribution d{{0.6, 0.3, 0.1}};
  EXPECT_EQ(truncate_top_p(d, 1.0), d);
  EXPECT_EQ(truncate_top_p(d, 0.5), (Distribution{{1.0, 0.0, 0.0}}));
  const auto e = truncate_top_p({{0.4, 0.4, 0.2}}, 0.5);
  EXPECT_NEAR(e[0], 0.5, 1e-15);
  EXPECT_NEAR(e[1], 0.5, 1e-15);
  EXPECT_EQ(e[2], 0.0);
  EXPECT_THROW(truncate_top_p(d, 0.0), ConfigError);
  EXPECT_THROW(truncate_top_p(d, 1.5), ConfigError);
}

TEST(Draw, NeverSelectsZeroMass) {
  const Distribution d{{0.0, 0.5, 0.0, 0.5, 0.0}};
  for (double u : {0.0, 0.25, 0.4999999, 0.5, 0.75, 0.9999999999})
    EXPECT_TRUE(d[draw(d, u)] > 0.0);
}

TEST(TabularMarkovLM, SoftmaxReproducesRow) {
  const auto v = Vocabulary::from_content("a");  // a ^ $ _
  std::vector<double> table(16 * 4, 0.0);
  MarkovSpec tmp = MarkovSpec::constant(v, 2, 0);
  table = tmp.table();
  // Context (a, a) -> [0.5 a, 0 ^, 0.5 $, 0 _]
  const std::size_t row = 0;
  table[row * 4 + 0] = 0.5;
  table[row * 4 + 2] = 0.5;
  const TabularMarkovLM lm(MarkovSpec(v, 2, table));
  const TokenSeq prompt{0, 0};
  const auto d = softmax_with_temperature(lm.next_logits(prompt, {}), 1.0);
  EXPECT_NEAR(d[0], 0.5, 1e-9);
  EXPECT_NEAR(d[1], 0.0, 1e-9);
  EXPECT_NEAR(d[2], 0.5, 1e-9);
  EXPECT_NEAR(d[3], 0.0, 1e-9);
  EXPECT_EQ(lm.next_logits(prompt, {})[1], kLogFloor);
  EXPECT_THROW(lm.next_logits(TokenSeq{0, 7}, {}), InputError);
}

TEST(NeuralLM, ZeroOutputWeightsGiveUniform) {
  NeuralLM m = NeuralLM::random({6, 3, 4, 5}, 3, 1, 1.0);
  auto p = m.mutable_params();
  for (std::size_t i = m.layout().w2; i < m.layout().total; ++i) p[i] = 0.0;
  const auto d = softmax_with_temperature(m.next_logits(TokenSeq{0, 1}, TokenSeq{2}), 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], 1.0 / 6.0, 1e-15);
}

TEST(NeuralLM, DeterministicAcrossCalls) {
  const NeuralLM m = NeuralLM::random({16, 4, 16, 64}, 13, 42, 1.0);
  const TokenSeq prompt{1, 2}, prefix{3, 4, 5};
  const auto ref = m.next_logits(prompt, prefix);
  for (int i = 0; i < 100; ++i)
    EXPECT_EQ(m.next_logits(prompt, prefix).values, ref.values);
}

TEST(NeuralLM, ContextIsBosPaddedWindow) {
  const NeuralLM m = NeuralLM::random({8, 4, 2, 3}, 5, 0);
  EXPECT_EQ(m.context_window(TokenSeq{1}, TokenSeq{2}), (TokenSeq{5, 5, 1, 2}));
  EXPECT_EQ(m.context_window(TokenSeq{1, 2, 3}, TokenSeq{4, 0}),
            (TokenSeq{2, 3, 4, 0}));
  // Only the window matters.
  EXPECT_EQ(m.next_logits(TokenSeq{7, 1, 2, 3}, TokenSeq{4}).values,
            m.next_logits(TokenSeq{0, 1, 2, 3}, TokenSeq{4}).values);
  EXPECT_THROW(m.next_logits(TokenSeq{8}, {}), InputError);
}

TEST(NeuralLM, FrozenModelRefusesMutation) {
  NeuralLM m = NeuralLM::random({8, 2, 2, 3}, 5, 0, 0.1, false);
  EXPECT_THROW(m.mutable_params(), InternalError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const NeuralLM m = NeuralLM::random({16, 4, 16, 64}, 13, 9, 1.0);
  std::stringstream ss;
  write_checkpoint(ss, m);
  const auto text = ss.str();
  EXPECT_NE(text.find("\"version\":1"), std::string::npos);
  const NeuralLM back = read_checkpoint(ss);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.hyper(), m.hyper());
}

TEST(Checkpoint, RejectsTruncatedData) {
  const NeuralLM m = NeuralLM::random({4, 1, 1, 1}, 0, 9);
  std::stringstream ss;
  write_checkpoint(ss, m);
  auto text = ss.str();
  const auto pos = text.rfind("\"data\":[");
  text = text.substr(0, pos) + "\"data\":[]}]}";
  std::istringstream is(text);
  EXPECT_THROW(read_checkpoint(is), IoError);
}

}  // namespace
}  // namespace skd
