#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lshazard/network.hpp"
#include "support/gradient_check.hpp"

namespace lshazard {
namespace {

Matrix random_features(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) x(r, c) = rng.normal();
  return x;
}

TEST(Network, ParameterCountMatchesLayout) {
  const auto p = init_parameters(6, 1);
  const Architecture a{6, 16, 64};
  // first block 6*64+3*64, fifteen blocks 64*64+3*64, two heads of 65, two shapes
  EXPECT_EQ(trainable_parameter_count(a), 6u * 64 + 192 + 15u * (4096 + 192) + 130 + 2);
  EXPECT_EQ(flatten_trainable(p).size(), trainable_parameter_count(a));
  EXPECT_EQ(p.blocks.size(), 16u);
  EXPECT_EQ(p.width(), 64u);
}

TEST(Network, InitializationIsSeeded) {
  const auto a = flatten_trainable(init_parameters(4, 9));
  const auto b = flatten_trainable(init_parameters(4, 9));
  const auto c = flatten_trainable(init_parameters(4, 10));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  const auto p = init_parameters(4, 9);
  EXPECT_NEAR(p.kappa(), 0.5, 1e-15);
  EXPECT_NEAR(p.xi(), 0.5, 1e-15);
}

TEST(Network, ZeroWeightsGiveEvenOdds) {
  auto p = zeros_like(init_parameters(3, 2, {2, 8, 0.2, 0.99}));
  for (auto& b : p.blocks) b.running_var.setOnes();
  const auto out = forward(random_features(10, 3, 1), p, Mode::inference);
  for (Eigen::Index i = 0; i < 10; ++i) {
    EXPECT_EQ(out.p(i), 0.5);
    EXPECT_EQ(out.sigma(i), p.sigma_floor);
  }
}

TEST(Network, InferenceIsRowwise) {
  const auto p = init_parameters(5, 3, {4, 16, 0.2, 0.99});
  const auto x = random_features(40, 5, 4);
  const auto full = forward(x, p, Mode::inference);
  for (Eigen::Index r = 0; r < 40; r += 7) {
    const auto one = forward(x.row(r), p, Mode::inference);
    EXPECT_NEAR(one.p(0), full.p(r), 1e-12);
    EXPECT_NEAR(one.sigma(0), full.sigma(r), 1e-12);
  }
}

TEST(Network, OutputsAreInRange) {
  const auto p = init_parameters(5, 3, {4, 16, 0.2, 0.99});
  const auto out = forward(random_features(200, 5, 8), p, Mode::train, 17);
  EXPECT_TRUE(((out.p.array() > 0.0) && (out.p.array() < 1.0)).all());
  EXPECT_TRUE((out.sigma.array() >= p.sigma_floor).all());
}

TEST(Network, DropoutRateAndScaling) {
  const auto m = dropout_mask(500, 200, 0.2, 5);
  const double dropped = static_cast<double>((m.array() == 0.0).count()) / static_cast<double>(m.size());
  EXPECT_NEAR(dropped, 0.2, 0.01);
  EXPECT_NEAR(m.maxCoeff(), 1.25, 1e-15);
  EXPECT_EQ(dropout_mask(3, 3, 0.5, 1), dropout_mask(3, 3, 0.5, 1));
}

TEST(Network, TrainingModeDependsOnDropoutSeed) {
  const auto p = init_parameters(5, 3, {2, 16, 0.3, 0.99});
  const auto x = random_features(32, 5, 2);
  const auto a = forward(x, p, Mode::train, 1);
  const auto b = forward(x, p, Mode::train, 1);
  const auto c = forward(x, p, Mode::train, 2);
  EXPECT_EQ(a.p, b.p);
  EXPECT_NE(a.p, c.p);
  EXPECT_EQ(forward(x, p, Mode::inference, 1).p, forward(x, p, Mode::inference, 2).p);
}

TEST(Network, RunningStatisticsMoveTowardBatch) {
  auto p = init_parameters(3, 1, {1, 4, 0.0, 0.9});
  ForwardCache cache;
  (void)forward(random_features(64, 3, 3), p, Mode::train, 0, &cache);
  const Vector target = cache.blocks[0].batch_mean.transpose();
  update_running_statistics(p, cache);
  EXPECT_TRUE(p.blocks[0].running_mean.isApprox(0.1 * target, 1e-12));
}

TEST(Network, RejectsBadInput) {
  const auto p = init_parameters(3, 1, {1, 4, 0.0, 0.9});
  EXPECT_THROW((void)forward(random_features(4, 2, 1), p, Mode::inference), DomainError);
  Matrix bad = random_features(4, 3, 1);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW((void)forward(bad, p, Mode::inference), NumericalError);
  EXPECT_THROW((void)init_parameters(0, 1), DomainError);
}

TEST(Network, FlatRoundTripAndPaths) {
  auto p = init_parameters(3, 1, {2, 4, 0.0, 0.9});
  auto flat = flatten_trainable(p);
  for (auto& v : flat) v += 1.0;
  assign_trainable(p, flat);
  EXPECT_EQ(flatten_trainable(p), flat);
  EXPECT_EQ(trainable_path(p, 0), "blocks[0].weight[0]");
  EXPECT_EQ(trainable_path(p, flat.size() - 1), "log_xi");
  flat.pop_back();
  EXPECT_THROW(assign_trainable(p, flat), DomainError);
}

TEST(Gradient, MatchesCentralDifferences) {
  const auto r = testing::check_gradients(42, 5, 2, 4);
  EXPECT_LE(r.worst_excess, 0.0) << r.worst_path << " relative " << r.worst_relative;
}

TEST(Gradient, DeeperNetworkMatchesCentralDifferences) {
  const auto r = testing::check_gradients(43, 2, 4, 6);
  EXPECT_LE(r.worst_excess, 0.0) << r.worst_path << " relative " << r.worst_relative;
}

}  // namespace
}  // namespace lshazard
