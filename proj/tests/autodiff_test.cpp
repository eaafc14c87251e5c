// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "skd/autodiff.hpp"

namespace skd {
namespace {

constexpr TokenId kBos = 3;
constexpr TokenId kPad = 4;

NeuralLM tiny_model(std::uint64_t seed) {
  return NeuralLM::random({5, 2, 3, 4}, kBos, seed, 1.0);
}

Distribution random_simplex(RngCursor& rng, std::size_t v) {
  Distribution d;
  double total = 0.0;
  for (std::size_t i = 0; i < v; ++i) {
    d.probs.push_back(0.05 + rng.uniform());
    total += d.probs.back();
  }
  for (double& p : d.probs) p /= total;
  return d;
}

LossBatch random_batch(std::uint64_t seed) {
  RngCursor rng(RngStream(seed, "autodiff-batch"));
  LossBatch batch;
  batch.pad = kPad;
  for (int b = 0; b < 3; ++b) {
    LossItem item;
    item.prompt = {static_cast<TokenId>(rng.below(3))};
    const std::size_t len = 2 + rng.below(3);
    for (std::size_t i = 0; i < len; ++i) {
      item.target.push_back(static_cast<TokenId>(rng.below(3)));
      item.teacher.push_back(random_simplex(rng, 5));
    }
    batch.items.push_back(item);
  }
  // One padded tail position.
  batch.items[0].target.push_back(kPad);
  batch.items[0].teacher.push_back(random_simplex(rng, 5));
  return batch;
}

const std::vector<LossSpec> kAllLosses{
    LossSpec::nll(), LossSpec::of(DivergenceKind::forward_kl),
    LossSpec::of(DivergenceKind::reverse_kl), LossSpec::of(DivergenceKind::jsd),
    LossSpec::of(DivergenceKind::tv)};

TEST(ForwardBackward, MatchesFiniteDifferencesForEveryLoss) {
  for (const auto& spec : kAllLosses)
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto model = tiny_model(seed);
      const auto batch = random_batch(100 + seed);
      const auto exact = forward_backward(model, batch, spec);
      const auto fd = finite_diff_grad(model, batch, spec, 1e-5);
      EXPECT_LT(max_relative_error(exact.grads.values, fd.values), 1e-4)
          << "loss " << static_cast<int>(spec.kind) << "/"
          << to_string(spec.divergence.kind) << " seed " << seed;
      EXPECT_NEAR(exact.loss, batch_loss(model, batch, spec), 1e-12);
    }
}

TEST(ForwardBackward, TeacherEqualsStudentGivesZero) {
  const auto model = tiny_model(7);
  LossBatch batch;
  LossItem item{{0}, {1, 2, 0}, {}};
  for (std::size_t i = 0; i < item.target.size(); ++i)
    item.teacher.push_back(softmax_with_temperature(
        model.next_logits(item.prompt, std::span(item.target).first(i)), 1.0));
  batch.items.push_back(item);
  const auto r = forward_backward(model, batch, LossSpec::of(DivergenceKind::forward_kl));
  EXPECT_NEAR(r.loss, 0.0, 1e-10);
  for (double g : r.grads.values) EXPECT_NEAR(g, 0.0, 1e-10);
}

TEST(ForwardBackward, UniformStudentNllIsLn2) {
  NeuralLM m = NeuralLM::random({2, 1, 1, 1}, 1, 0);
  auto p = m.mutable_params();
  std::fill(p.begin(), p.end(), 0.0);
  LossBatch batch{{{{0}, {0}, {}}}};
  EXPECT_NEAR(forward_backward(m, batch, LossSpec::nll()).loss, std::log(2.0), 1e-15);
}

TEST(ForwardBackward, PerSequenceMeanThenBatchMean) {
  const auto model = tiny_model(3);
  const auto batch = random_batch(9);
  const auto spec = LossSpec::of(DivergenceKind::forward_kl);
  double expect = 0.0;
  for (const auto& item : batch.items) {
    LossBatch one{{item}, kPad};
    expect += batch_loss(model, one, spec);
  }
  expect /= static_cast<double>(batch.items.size());
  EXPECT_NEAR(forward_backward(model, batch, spec).loss, expect, 1e-14);
}

TEST(ForwardBackward, PaddedPositionsAreIgnored) {
  const auto model = tiny_model(4);
  auto batch = random_batch(5);
  const auto spec = LossSpec::of(DivergenceKind::jsd);
  const auto a = forward_backward(model, batch, spec);
  batch.items[0].teacher.back() = Distribution{{1.0, 0.0, 0.0, 0.0, 0.0}};
  const auto b = forward_backward(model, batch, spec);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grads.values, b.grads.values);
}

TEST(ForwardBackward, TeacherIsAConstant) {
  // Changing teacher probabilities changes the loss but gradients are always
  // for the student parameter vector only.
  const auto model = tiny_model(11);
  auto batch = random_batch(12);
  const auto spec = LossSpec::of(DivergenceKind::forward_kl);
  const auto a = forward_backward(model, batch, spec);
  RngCursor rng(RngStream(1, "perturb"));
  for (auto& item : batch.items)
    for (auto& t : item.teacher) t = random_simplex(rng, 5);
  const auto b = forward_backward(model, batch, spec);
  EXPECT_NE(a.loss, b.loss);
  EXPECT_EQ(a.grads.size(), model.params().size());
  EXPECT_EQ(b.grads.size(), model.params().size());
}

TEST(ForwardBackward, Errors) {
  const auto model = tiny_model(1);
  EXPECT_THROW(forward_backward(model, {}, LossSpec::nll()), InputError);
  LossBatch mismatch{{{{0}, {1, 2}, {Distribution{{0.2, 0.2, 0.2, 0.2, 0.2}}}}}};
  EXPECT_THROW(forward_backward(model, mismatch, LossSpec::of(DivergenceKind::tv)),
               InternalError);
  LossBatch all_pad{{{{0}, {kPad}, {}}}, kPad};
  EXPECT_THROW(forward_backward(model, all_pad, LossSpec::nll()), InputError);
}

TEST(ForwardBackward, NonFiniteLossReportsPosition) {
  auto model = tiny_model(2);
  model.mutable_params()[model.layout().b2] = NAN;
  LossBatch batch{{{{0}, {1, 1}, {}}}};
  try {
    forward_backward(model, batch, LossSpec::nll());
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("position 0"), std::string::npos);
  }
}

TEST(FiniteDiff, ExactOnLinearAndIgnoredCoordinates) {
  const std::vector<double> a{1.5, -2.0, 0.0, 4.25};
  const std::vector<double> x{0.3, 0.1, -0.7, 2.0};
  const auto g = finite_diff_grad(
      [&](std::span<const double> t) {
        double s = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) s += a[i] * t[i];
        return s;
      },
      x, 1e-5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(g.values[i], a[i], 1e-9);
  EXPECT_NEAR(g.values[2], 0.0, 1e-8);
  EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return 0.0; }, x, 0.0),
               ConfigError);
}

}  // namespace
}  // namespace skd
