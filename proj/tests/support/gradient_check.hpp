#pragma once

// Central finite-difference check of the analytic training gradient on
// small random networks, shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "lshazard/training.hpp"

namespace lshazard::testing {

struct GradientCheckResult {
  double worst_excess = 0.0;  // max of |g - fd| - tolerance; <= 0 means pass
  double worst_relative = 0.0;
  std::string worst_path;
  std::size_t parameters = 0;
  std::size_t batches = 0;
};

// Smallest distance of any ReLU input or raw scale from its kink.
inline double kink_margin(const ForwardCache& c, double sigma_floor) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& b : c.blocks) m = std::min(m, b.pre_relu.cwiseAbs().minCoeff());
  return std::min(m, (c.raw_sigma.array() - sigma_floor).abs().minCoeff());
}

// Random batch and parameters whose activations sit away from every kink,
// so central differences with step `h` never straddle one.
struct GradientCase {
  TrainingBatch batch;
  NetworkParameters params;
  std::uint64_t dropout_seed = 0;
};

inline GradientCase gradient_case(std::uint64_t seed, std::size_t inputs, std::size_t blocks, std::size_t width,
                                  std::size_t rows, const LossConfig& cfg) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(derive_seed(seed, {attempt}));
    GradientCase gc;
    InitOptions opts;
    opts.blocks = blocks;
    opts.width = width;
    gc.params = init_parameters(inputs, rng.next(), opts);
    gc.params.head_sigma.bias = 1.5;
    gc.params.log_kappa = std::log(0.5 + rng.uniform());
    gc.params.log_xi = std::log(0.1 + 0.3 * rng.uniform());
    for (auto& b : gc.params.blocks) {
      for (auto& v : b.bias) v = 0.1 * rng.normal();
      for (auto& v : b.bn_scale) v = 1.0 + 0.2 * rng.normal();
      for (auto& v : b.bn_shift) v = 0.3 * rng.normal();
    }
    gc.batch.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inputs));
    for (Eigen::Index r = 0; r < gc.batch.features.rows(); ++r)
      for (Eigen::Index c = 0; c < gc.batch.features.cols(); ++c) gc.batch.features(r, c) = rng.normal();
    for (std::size_t i = 0; i < rows; ++i) {
      const int l = i % 2 == 0 || rng.uniform() < 0.3 ? 1 : 0;
      gc.batch.landslide.push_back(l);
      gc.batch.area.push_back(l ? 0.05 + 2.0 * rng.uniform() : 0.0);
    }
    gc.dropout_seed = rng.next();
    const auto lg = loss_and_gradient(gc.batch, gc.params, cfg, gc.dropout_seed);
    if (kink_margin(lg.cache, gc.params.sigma_floor) > 1e-3) return gc;
  }
}

// |g - fd| <= rel * max(|g|, |fd|) + abs_floor for every parameter.
inline GradientCheckResult check_gradients(std::uint64_t seed, std::size_t batches, std::size_t blocks,
                                           std::size_t width, double h = 1e-5, double rel = 1e-4,
                                           double abs_floor = 1e-8) {
  LossConfig cfg;
  cfg.gamma = 0.4;
  GradientCheckResult res;
  res.worst_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < batches; ++k) {
    const auto gc = gradient_case(derive_seed(seed, {k}), 3, blocks, width, 16, cfg);
    const auto g = flatten_trainable(gradient(gc.batch, gc.params, cfg, gc.dropout_seed));
    auto theta = flatten_trainable(gc.params);
    auto p = gc.params;
    auto loss_at = [&](std::size_t i, double v) {
      const double saved = theta[i];
      theta[i] = v;
      assign_trainable(p, theta);
      theta[i] = saved;
      return batch_loss(gc.batch, p, cfg, Mode::train, gc.dropout_seed);
    };
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double fd = (loss_at(i, theta[i] + h) - loss_at(i, theta[i] - h)) / (2.0 * h);
      const double scale = std::max(std::abs(g[i]), std::abs(fd));
      const double excess = std::abs(g[i] - fd) - (rel * scale + abs_floor);
      if (excess > res.worst_excess) {
        res.worst_excess = excess;
        res.worst_relative = scale > 0.0 ? std::abs(g[i] - fd) / scale : 0.0;
        res.worst_path = "batch " + std::to_string(k) + " " + trainable_path(gc.params, i);
      }
    }
    res.parameters = theta.size();
    ++res.batches;
  }
  return res;
}

}  // namespace lshazard::testing
