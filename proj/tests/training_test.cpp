#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lshazard/training.hpp"

namespace lshazard {
namespace {

std::vector<HeadOutputs> outputs_for(std::initializer_list<std::pair<double, double>> v) {
  std::vector<HeadOutputs> o;
  for (auto [p, s] : v) o.push_back({p, s});
  return o;
}

TEST(Loss, DecompositionLimits) {
  const std::vector<int> l{1, 0, 1, 0};
  const std::vector<double> a{0.3, 0.0, 1.7, 0.0};
  const auto out = outputs_for({{0.7, 0.5}, {0.2, 0.9}, {0.4, 1.1}, {0.6, 0.3}});
  const double bce = -(0.9 * std::log(0.7) + 0.1 * std::log(0.8) + 0.9 * std::log(0.4) + 0.1 * std::log(0.4));
  const double nll = -egpd_logpdf(0.3, {2.0, 0.5, 0.3}) - egpd_logpdf(1.7, {2.0, 1.1, 0.3});
  EXPECT_NEAR(joint_loss_terms(l, a, out, 2.0, 0.3, 1.0).total, bce, 1e-12);
  EXPECT_NEAR(joint_loss_terms(l, a, out, 2.0, 0.3, 1e-12).total, nll, 1e-9);
  const auto half = joint_loss_terms(l, a, out, 2.0, 0.3, 0.5);
  EXPECT_NEAR(half.total, 0.5 * (bce + nll), 1e-12);
  EXPECT_NEAR(half.bce, bce, 1e-12);
  EXPECT_NEAR(half.egpd_nll, nll, 1e-12);
}

TEST(Loss, RejectsInconsistentRecords) {
  const auto out = outputs_for({{0.5, 1.0}});
  EXPECT_THROW((void)joint_loss_terms(std::vector<int>{1}, std::vector<double>{0.0}, out, 1.0, 0.2, 0.5), DataError);
  EXPECT_THROW((void)joint_loss_terms(std::vector<int>{0}, std::vector<double>{0.1}, out, 1.0, 0.2, 0.5), DataError);
}

TEST(Loss, GammaMustBeInterior) {
  LossConfig c;
  c.gamma = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.gamma = 0.5;
  EXPECT_NO_THROW(c.validate());
}

TEST(Loss, BatchLossAgreesWithHeadLoss) {
  auto p = init_parameters(3, 4, {2, 8, 0.0, 0.99});
  p.head_sigma.bias = 2.0;
  TrainingBatch b;
  b.features = Matrix::Random(12, 3);
  for (int i = 0; i < 12; ++i) {
    b.landslide.push_back(i % 3 == 0);
    b.area.push_back(i % 3 == 0 ? 0.1 * (i + 1) : 0.0);
  }
  LossConfig cfg;
  cfg.gamma = 0.3;
  const auto out = forward(b.features, p, Mode::inference);
  std::vector<HeadOutputs> heads;
  for (Eigen::Index i = 0; i < 12; ++i) heads.push_back({out.p(i), out.sigma(i)});
  EXPECT_NEAR(batch_loss(b, p, cfg, Mode::inference, 0),
              joint_loss_terms(b.landslide, b.area, heads, p.kappa(), p.xi(), 0.3).total, 1e-10);
}

TEST(Adam, StaircaseSchedule) {
  OptimizerState s;
  s.config.learning_rate = 1e-3;
  EXPECT_DOUBLE_EQ(s.learning_rate_at(0), 1e-3);
  EXPECT_DOUBLE_EQ(s.learning_rate_at(49'999), 1e-3);
  EXPECT_DOUBLE_EQ(s.learning_rate_at(50'000), 0.95e-3);
  EXPECT_DOUBLE_EQ(s.learning_rate_at(120'000), 1e-3 * 0.95 * 0.95);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = init_parameters(2, 1, {1, 2, 0.0, 0.99});
  auto g = zeros_like(p);
  g.log_kappa = 3.0;
  g.log_xi = -0.001;
  OptimizerState s;
  s.config.learning_rate = 0.01;
  const double k0 = p.log_kappa, x0 = p.log_xi;
  adam_step(p, g, s);
  EXPECT_NEAR(p.log_kappa, k0 - 0.01, 1e-9);
  EXPECT_NEAR(p.log_xi, x0 + 0.01, 1e-7);
  EXPECT_EQ(s.step, 1u);
}

Dataset small_dataset(std::uint64_t seed, std::size_t sites = 40, std::size_t years = 25) {
  return simulate(sites, years, GeneratorSpec::quickstart(), seed).dataset;
}

TrainConfig small_config() {
  TrainConfig c;
  c.architecture = {2, 16, 0.1, 0.9};
  c.loss.batch_size = 128;
  c.optimizer.learning_rate = 3e-3;
  c.epochs = 8;
  c.seed = 5;
  c.threads = 1;
  return c;
}

TEST(Train, DeterministicForSeed) {
  const auto d = small_dataset(1);
  const auto a = train(d, small_config());
  const auto b = train(d, small_config());
  EXPECT_EQ(flatten_trainable(a.model.network), flatten_trainable(b.model.network));
  ASSERT_EQ(a.trace.size(), 8u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].val_loss, b.trace[i].val_loss);
  EXPECT_EQ(a.split.train.size() + a.split.test.size(), d.records.size());
  EXPECT_EQ(a.split.train.size(), 700u);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  auto c = small_config();
  c.epochs = 0;
  const auto r = train(small_dataset(1), c);
  const auto init = init_parameters(6, derive_seed(c.seed, {kInitStream}), c.architecture);
  EXPECT_EQ(flatten_trainable(r.model.network), flatten_trainable(init));
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.best_epoch, 0u);
}

TEST(Train, ImprovesOccurrenceSkill) {
  auto c = small_config();
  c.epochs = 25;
  const auto d = small_dataset(2, 60, 25);
  const auto r = train(d, c);
  const auto test = select(d.records, r.split.test);
  const auto vm = validation_metrics(r.model, test, c.loss, 1);
  EXPECT_GT(vm.auc, 0.85);
  EXPECT_LT(r.trace.back().train_loss, r.trace.front().train_loss);
  EXPECT_GE(r.best_epoch, 1u);
}

TEST(Train, RejectsBadInput) {
  auto c = small_config();
  c.loss.gamma = 1.5;
  EXPECT_THROW((void)train(small_dataset(1), c), ConfigError);
  Dataset empty;
  EXPECT_THROW((void)train(empty, small_config()), DataError);
  auto bad = small_dataset(1, 4, 4);
  bad.records[0].landslide = 1;
  bad.records[0].area_density = 0.0;
  EXPECT_THROW((void)train(bad, small_config()), DataError);
}

TEST(Train, TraceCsvHasOneRowPerEpoch) {
  const auto r = train(small_dataset(3, 10, 10), small_config());
  const auto path = ::testing::TempDir() + "trace.csv";
  write_trace_csv(r.trace, path);
  const auto t = csv::read_file(path);
  EXPECT_EQ(t.rows.size(), 8u);
  EXPECT_EQ(t.header.front(), "epoch");
}

TEST(TuneGamma, DefaultGridAndSelection) {
  const auto g = default_gamma_grid();
  ASSERT_EQ(g.size(), 9u);
  EXPECT_DOUBLE_EQ(g.front(), 0.3);
  EXPECT_DOUBLE_EQ(g.back(), 0.7);
  auto c = small_config();
  c.epochs = 3;
  const std::vector<double> grid{0.3, 0.6};
  const auto t = tune_gamma(small_dataset(4, 20, 20), c, grid);
  ASSERT_EQ(t.results.size(), 2u);
  EXPECT_TRUE(t.results[0].ok && t.results[1].ok);
  const auto& best = t.results[0].crps_mean <= t.results[1].crps_mean ? t.results[0] : t.results[1];
  EXPECT_EQ(t.best_gamma, best.gamma);
  EXPECT_THROW((void)tune_gamma(small_dataset(4, 2, 2), c, std::vector<double>{1.0}), ConfigError);
}

}  // namespace
}  // namespace lshazard
