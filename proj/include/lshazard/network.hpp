#pragma once

// Shared feed-forward network with two heads.
//
// Each block applies, in order: dense -> dropout (training only) -> batch
// normalization -> ReLU. The susceptibility head is a dense unit followed by
// a sigmoid; the scale head is a dense unit followed by a ReLU floored at
// sigma_floor. The eGPD shapes kappa and xi are global trainable scalars
// stored on the log scale.
//
// Rows of every activation matrix are records.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lshazard/error.hpp"
#include "lshazard/rng.hpp"

namespace lshazard {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Architecture {
  std::size_t input_width = 0;
  std::size_t blocks = 16;
  std::size_t width = 64;
};

struct DenseBlock {
  Matrix weight;  // fan_in x width
  Vector bias;
  Vector bn_scale;
  Vector bn_shift;
  Vector running_mean;
  Vector running_var;
};

struct DenseHead {
  Vector weight;  // width
  double bias = 0.0;
};

struct NetworkParameters {
  std::vector<DenseBlock> blocks;
  DenseHead head_p;
  DenseHead head_sigma;
  double log_kappa = 0.0;
  double log_xi = 0.0;

  double dropout_rate = 0.2;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;
  double sigma_floor = 1e-6;

  [[nodiscard]] std::size_t input_width() const {
    return blocks.empty() ? 0 : static_cast<std::size_t>(blocks.front().weight.rows());
  }
  [[nodiscard]] std::size_t width() const {
    return blocks.empty() ? 0 : static_cast<std::size_t>(blocks.front().weight.cols());
  }
  [[nodiscard]] double kappa() const { return std::exp(log_kappa); }
  [[nodiscard]] double xi() const { return std::exp(log_xi); }
};

// Number of trainable scalars for an architecture: dense weights and biases,
// batch-norm scale and shift, two single-unit heads, log kappa and log xi.
[[nodiscard]] constexpr std::size_t trainable_parameter_count(const Architecture& a) noexcept {
  std::size_t n = 0;
  for (std::size_t b = 0; b < a.blocks; ++b) {
    const std::size_t fan_in = b == 0 ? a.input_width : a.width;
    n += fan_in * a.width + a.width + 2 * a.width;
  }
  return n + 2 * (a.width + 1) + 2;
}

// Visits every trainable tensor as (name, span). Works on const and mutable
// parameters; the visiting order defines the flat parameter layout.
template <class Params, class Fn>
void for_each_trainable(Params& p, Fn&& fn) {
  auto view = [](auto& v) { return std::span(v.data(), static_cast<std::size_t>(v.size())); };
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string prefix = "blocks[" + std::to_string(b) + "].";
    fn(prefix + "weight", view(blk.weight));
    fn(prefix + "bias", view(blk.bias));
    fn(prefix + "bn_scale", view(blk.bn_scale));
    fn(prefix + "bn_shift", view(blk.bn_shift));
  }
  fn(std::string("head_p.weight"), view(p.head_p.weight));
  fn(std::string("head_p.bias"), std::span(&p.head_p.bias, 1));
  fn(std::string("head_sigma.weight"), view(p.head_sigma.weight));
  fn(std::string("head_sigma.bias"), std::span(&p.head_sigma.bias, 1));
  fn(std::string("log_kappa"), std::span(&p.log_kappa, 1));
  fn(std::string("log_xi"), std::span(&p.log_xi, 1));
}

[[nodiscard]] inline std::vector<double> flatten_trainable(const NetworkParameters& p) {
  std::vector<double> out;
  for_each_trainable(p, [&](const std::string&, auto s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

inline void assign_trainable(NetworkParameters& p, std::span<const double> flat) {
  std::size_t pos = 0;
  for_each_trainable(p, [&](const std::string&, std::span<double> s) {
    if (pos + s.size() > flat.size()) throw DomainError("assign_trainable: vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + s.size()), s.begin());
    pos += s.size();
  });
  if (pos != flat.size()) throw DomainError("assign_trainable: vector length mismatch");
}

// Name of the tensor holding flat index `index` (for error messages).
[[nodiscard]] inline std::string trainable_path(const NetworkParameters& p, std::size_t index) {
  std::string found = "<out of range>";
  std::size_t pos = 0;
  for_each_trainable(p, [&](const std::string& name, auto s) {
    if (index >= pos && index < pos + s.size())
      found = s.size() == 1 ? name : name + "[" + std::to_string(index - pos) + "]";
    pos += s.size();
  });
  return found;
}

// A parameter set of the same shape with every value zero.
[[nodiscard]] inline NetworkParameters zeros_like(const NetworkParameters& p) {
  NetworkParameters z = p;
  for_each_trainable(z, [](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  for (auto& b : z.blocks) {
    b.running_mean.setZero();
    b.running_var.setZero();
  }
  return z;
}

struct InitOptions {
  std::size_t blocks = 16;
  std::size_t width = 64;
  double dropout_rate = 0.2;
  double bn_momentum = 0.99;
};

// He (fan-in) Gaussian initialization for block weights, N(0, 1/fan_in) for
// the heads, zero biases, identity batch normalization, kappa = xi = 0.5.
[[nodiscard]] inline NetworkParameters init_parameters(std::size_t input_width, std::uint64_t seed,
                                                       const InitOptions& opts = {}) {
  if (input_width == 0) throw DomainError("init_parameters: input width must be at least 1");
  if (opts.blocks == 0 || opts.width == 0) throw DomainError("init_parameters: empty architecture");
  if (!(opts.dropout_rate >= 0.0 && opts.dropout_rate < 1.0))
    throw DomainError("init_parameters: dropout rate must lie in [0, 1)");
  if (!(opts.bn_momentum >= 0.0 && opts.bn_momentum < 1.0))
    throw DomainError("init_parameters: batch-norm momentum must lie in [0, 1)");
  Rng rng(derive_seed(seed, {0x1417}));
  NetworkParameters p;
  p.dropout_rate = opts.dropout_rate;
  p.bn_momentum = opts.bn_momentum;
  const auto w = static_cast<Eigen::Index>(opts.width);
  for (std::size_t b = 0; b < opts.blocks; ++b) {
    const auto fan_in = static_cast<Eigen::Index>(b == 0 ? input_width : opts.width);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    DenseBlock blk;
    blk.weight.resize(fan_in, w);
    for (Eigen::Index r = 0; r < fan_in; ++r)
      for (Eigen::Index c = 0; c < w; ++c) blk.weight(r, c) = sd * rng.normal();
    blk.bias = Vector::Zero(w);
    blk.bn_scale = Vector::Ones(w);
    blk.bn_shift = Vector::Zero(w);
    blk.running_mean = Vector::Zero(w);
    blk.running_var = Vector::Ones(w);
    p.blocks.push_back(std::move(blk));
  }
  const double head_sd = std::sqrt(1.0 / static_cast<double>(w));
  for (DenseHead* head : {&p.head_p, &p.head_sigma}) {
    head->weight.resize(w);
    for (Eigen::Index c = 0; c < w; ++c) head->weight(c) = head_sd * rng.normal();
    head->bias = 0.0;
  }
  p.log_kappa = std::log(0.5);
  p.log_xi = std::log(0.5);
  return p;
}

enum class Mode { train, inference };

// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
// 1 / (1 - rate). Entries are drawn row by row.
[[nodiscard]] inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

struct BlockCache {
  Matrix input;     // block input (B x fan_in)
  Matrix mask;      // dropout mask, empty when dropout is inactive
  Matrix xhat;      // normalized pre-activation
  Matrix pre_relu;  // batch-norm output
  RowVector inv_std;
  RowVector batch_mean;
  RowVector batch_var;
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  Matrix hidden;  // output of the last block
  Vector raw_sigma;
};

struct BatchOutputs {
  Vector logit;
  Vector p;
  Vector sigma;
};

// Forward pass over standardized features (rows are records). In training
// mode batch statistics are used and dropout is applied with masks derived
// from `dropout_seed`; running statistics are not modified here (see
// update_running_statistics). Passing `cache` records what backward needs.
[[nodiscard]] inline BatchOutputs forward(const Matrix& features, const NetworkParameters& params, Mode mode,
                                          std::uint64_t dropout_seed = 0, ForwardCache* cache = nullptr) {
  if (params.blocks.empty()) throw DomainError("forward: network has no blocks");
  if (features.rows() == 0) throw DomainError("forward: empty batch");
  if (static_cast<std::size_t>(features.cols()) != params.input_width())
    throw DomainError("forward: feature width " + std::to_string(features.cols()) + " does not match network input " +
                      std::to_string(params.input_width()));
  const Eigen::Index n = features.rows();
  const bool training = mode == Mode::train;
  if (cache) {
    cache->blocks.assign(params.blocks.size(), {});
  }
  Matrix h = features;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& blk = params.blocks[b];
    Matrix z = h * blk.weight;
    z.rowwise() += blk.bias.transpose();
    Matrix mask;
    if (training && params.dropout_rate > 0.0) {
      mask = dropout_mask(n, z.cols(), params.dropout_rate, derive_seed(dropout_seed, {b}));
      z.array() *= mask.array();
    }
    RowVector mean, var;
    if (training) {
      mean = z.colwise().mean();
      var = (z.rowwise() - mean).array().square().colwise().mean();
    } else {
      mean = blk.running_mean.transpose();
      var = blk.running_var.transpose();
    }
    const RowVector inv_std = (var.array() + params.bn_epsilon).rsqrt();
    Matrix xhat = (z.rowwise() - mean).array().rowwise() * inv_std.array();
    Matrix y = (xhat.array().rowwise() * blk.bn_scale.transpose().array()).rowwise() +
               blk.bn_shift.transpose().array();
    if (!y.allFinite()) throw NumericalError("forward: non-finite activation in block " + std::to_string(b));
    Matrix next = y.cwiseMax(0.0);
    if (cache) {
      auto& c = cache->blocks[b];
      c.input = std::move(h);
      c.mask = std::move(mask);
      c.xhat = std::move(xhat);
      c.pre_relu = std::move(y);
      c.inv_std = inv_std;
      c.batch_mean = mean;
      c.batch_var = var;
    }
    h = std::move(next);
  }
  BatchOutputs out;
  out.logit = (h * params.head_p.weight).array() + params.head_p.bias;
  Vector raw = (h * params.head_sigma.weight).array() + params.head_sigma.bias;
  if (!out.logit.allFinite() || !raw.allFinite()) throw NumericalError("forward: non-finite head output");
  out.p = out.logit.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const double floor = params.sigma_floor;
  out.sigma = raw.unaryExpr([floor](double v) { return std::max(v, floor); });
  if (cache) {
    cache->hidden = std::move(h);
    cache->raw_sigma = std::move(raw);
  }
  return out;
}

// Exponential-moving-average update of batch-norm running statistics from a
// training-mode forward cache.
inline void update_running_statistics(NetworkParameters& params, const ForwardCache& cache) {
  const double m = params.bn_momentum;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& blk = params.blocks[b];
    blk.running_mean = m * blk.running_mean + (1.0 - m) * cache.blocks[b].batch_mean.transpose();
    blk.running_var = m * blk.running_var + (1.0 - m) * cache.blocks[b].batch_var.transpose();
  }
}

// Reverse pass for a training-mode cache. `d_logit` and `d_sigma` are the
// loss derivatives with respect to the head pre-activation and the floored
// scale output; the returned gradient has the shape of `params` (running
// statistics zero). d_log_kappa / d_log_xi are copied through.
[[nodiscard]] inline NetworkParameters backward(const ForwardCache& cache, const NetworkParameters& params,
                                                const Vector& d_logit, const Vector& d_sigma, double d_log_kappa,
                                                double d_log_xi) {
  NetworkParameters g = zeros_like(params);
  const double floor = params.sigma_floor;
  const Vector d_raw = d_sigma.binaryExpr(cache.raw_sigma, [floor](double d, double raw) { return raw > floor ? d : 0.0; });

  g.head_p.weight = cache.hidden.transpose() * d_logit;
  g.head_p.bias = d_logit.sum();
  g.head_sigma.weight = cache.hidden.transpose() * d_raw;
  g.head_sigma.bias = d_raw.sum();
  g.log_kappa = d_log_kappa;
  g.log_xi = d_log_xi;

  Matrix dh = d_logit * params.head_p.weight.transpose() + d_raw * params.head_sigma.weight.transpose();
  const auto n = static_cast<double>(d_logit.size());
  for (std::size_t bi = params.blocks.size(); bi-- > 0;) {
    const auto& blk = params.blocks[bi];
    const auto& c = cache.blocks[bi];
    auto& gb = g.blocks[bi];
    Matrix dy = (c.pre_relu.array() > 0.0).select(dh, 0.0);
    gb.bn_scale = (dy.array() * c.xhat.array()).colwise().sum().transpose();
    gb.bn_shift = dy.colwise().sum().transpose();
    Matrix dxhat = dy.array().rowwise() * blk.bn_scale.transpose().array();
    const RowVector sum_dxhat = dxhat.colwise().sum();
    const RowVector sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum();
    Matrix dz = ((n * dxhat).rowwise() - sum_dxhat).array() - c.xhat.array().rowwise() * sum_dxhat_xhat.array();
    dz = dz.array().rowwise() * (c.inv_std.array() / n);
    if (c.mask.size() != 0) dz.array() *= c.mask.array();
    gb.weight = c.input.transpose() * dz;
    gb.bias = dz.colwise().sum().transpose();
    if (bi > 0) dh = dz * blk.weight.transpose();
  }
  return g;
}

}  // namespace lshazard
