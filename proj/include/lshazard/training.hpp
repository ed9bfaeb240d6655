#pragma once

// Joint occurrence/size loss, exact reverse-mode gradients, Adam with a
// staircase learning-rate schedule, the training loop and the gamma sweep.
//
// The loss over a batch B is the sum (not the mean)
//
//   gamma * sum_i -{w1 l_i log p_i + w0 (1 - l_i) log(1 - p_i)}
//     + (1 - gamma) * sum_i -l_i log f_eGPD(a_i; kappa, sigma_i, xi).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lshazard/data_io.hpp"
#include "lshazard/egpd.hpp"
#include "lshazard/evaluation.hpp"
#include "lshazard/model.hpp"
#include "lshazard/network.hpp"
#include "lshazard/numeric.hpp"
#include "lshazard/rng.hpp"

namespace lshazard {

struct LossConfig {
  double gamma = 0.5;
  double class_weight_positive = 0.9;
  double class_weight_negative = 0.1;
  std::size_t batch_size = 2048;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie strictly between 0 and 1");
    if (!(class_weight_positive > 0.0) || !(class_weight_negative > 0.0))
      throw ConfigError("class weights must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  }
};

struct LossTerms {
  double bce = 0.0;       // weighted binary cross-entropy, unscaled by gamma
  double egpd_nll = 0.0;  // eGPD negative log-likelihood over positives
  double total = 0.0;     // gamma * bce + (1 - gamma) * egpd_nll
};

namespace detail {

inline void check_consistency(int landslide, double area, std::size_t i) {
  if (landslide == 1 && !(area > 0.0))
    throw DataError("joint_loss: record " + std::to_string(i) + " has landslide=1 with area density 0 (inconsistent)");
  if (landslide == 0 && area != 0.0)
    throw DataError("joint_loss: record " + std::to_string(i) + " has landslide=0 with positive area density (inconsistent)");
  if (landslide != 0 && landslide != 1) throw DataError("joint_loss: landslide must be 0 or 1");
}

// log(1 + exp(x)) without overflow.
[[nodiscard]] inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

// Loss from head outputs. `gamma` is used as given, so the decomposition
// limits gamma = 1 and gamma -> 0 can be evaluated directly; training goes
// through LossConfig, which enforces 0 < gamma < 1.
[[nodiscard]] inline LossTerms joint_loss_terms(std::span<const int> landslide, std::span<const double> area,
                                                std::span<const HeadOutputs> outputs, double kappa, double xi,
                                                double gamma, double w_pos = 0.9, double w_neg = 0.1) {
  if (landslide.size() != outputs.size() || area.size() != outputs.size())
    throw DomainError("joint_loss: outputs are not aligned with the batch");
  std::vector<double> bce(outputs.size()), nll(outputs.size(), 0.0);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    detail::check_consistency(landslide[i], area[i], i);
    const double p = outputs[i].p;
    bce[i] = landslide[i] ? -w_pos * std::log(p) : -w_neg * std::log1p(-p);
    if (landslide[i]) nll[i] = -egpd_logpdf(area[i], {kappa, outputs[i].sigma, xi});
  }
  LossTerms t;
  t.bce = pairwise_sum(bce);
  t.egpd_nll = pairwise_sum(nll);
  t.total = gamma * t.bce + (1.0 - gamma) * t.egpd_nll;
  return t;
}

[[nodiscard]] inline double joint_loss(std::span<const SuYearRecord> batch, std::span<const HeadOutputs> outputs,
                                       double kappa, double xi, const LossConfig& config) {
  config.validate();
  std::vector<int> l;
  std::vector<double> a;
  for (const auto& r : batch) {
    l.push_back(r.landslide);
    a.push_back(r.area_density);
  }
  return joint_loss_terms(l, a, outputs, kappa, xi, config.gamma, config.class_weight_positive,
                          config.class_weight_negative)
      .total;
}

// A batch in network units: standardized features and area densities
// divided by the model's response scale.
struct TrainingBatch {
  Matrix features;
  std::vector<int> landslide;
  std::vector<double> area;
};

[[nodiscard]] inline TrainingBatch make_batch(const RegressionModel& model, std::span<const SuYearRecord> records) {
  TrainingBatch b;
  b.features = model.design_matrix(records);
  for (std::size_t i = 0; i < records.size(); ++i) {
    detail::check_consistency(records[i].landslide, records[i].area_density, i);
    b.landslide.push_back(records[i].landslide);
    b.area.push_back(records[i].area_density / model.response_scale);
  }
  return b;
}

struct LossAndGradient {
  double loss = 0.0;
  NetworkParameters gradient;
  ForwardCache cache;
};

// Loss of a training-mode forward pass, computed from the logits so that
// log p and log(1 - p) stay finite for saturated outputs.
[[nodiscard]] inline double batch_loss(const TrainingBatch& batch, const NetworkParameters& params, const LossConfig& cfg,
                                       Mode mode, std::uint64_t dropout_seed) {
  const auto out = forward(batch.features, params, mode, dropout_seed);
  const double kappa = params.kappa(), xi = params.xi();
  std::vector<double> terms(batch.landslide.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double z = out.logit(static_cast<Eigen::Index>(i));
    double v = batch.landslide[i] ? cfg.gamma * cfg.class_weight_positive * detail::softplus(-z)
                                  : cfg.gamma * cfg.class_weight_negative * detail::softplus(z);
    if (batch.landslide[i])
      v -= (1.0 - cfg.gamma) * egpd_logpdf(batch.area[i], {kappa, out.sigma(static_cast<Eigen::Index>(i)), xi});
    terms[i] = v;
  }
  return pairwise_sum(terms);
}

// Exact gradient of the joint loss composed with a training-mode forward
// pass, with respect to every trainable parameter.
[[nodiscard]] inline LossAndGradient loss_and_gradient(const TrainingBatch& batch, const NetworkParameters& params,
                                                       const LossConfig& cfg, std::uint64_t dropout_seed) {
  LossAndGradient res;
  const auto out = forward(batch.features, params, Mode::train, dropout_seed, &res.cache);
  const auto n = static_cast<Eigen::Index>(batch.landslide.size());
  const double kappa = params.kappa(), xi = params.xi();
  const double g = cfg.gamma;
  Vector d_logit(n), d_sigma = Vector::Zero(n);
  std::vector<double> terms(static_cast<std::size_t>(n)), dk(static_cast<std::size_t>(n), 0.0),
      dx(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double z = out.logit(i);
    const double p = out.p(i);
    if (batch.landslide[k]) {
      terms[k] = g * cfg.class_weight_positive * detail::softplus(-z);
      d_logit(i) = g * cfg.class_weight_positive * (p - 1.0);
      const auto d = egpd_logpdf_derivatives(batch.area[k], {kappa, out.sigma(i), xi});
      terms[k] -= (1.0 - g) * d.value;
      d_sigma(i) = -(1.0 - g) * d.d_sigma;
      dk[k] = -(1.0 - g) * d.d_log_kappa;
      dx[k] = -(1.0 - g) * d.d_log_xi;
    } else {
      terms[k] = g * cfg.class_weight_negative * detail::softplus(z);
      d_logit(i) = g * cfg.class_weight_negative * p;
    }
  }
  res.loss = pairwise_sum(terms);
  res.gradient = backward(res.cache, params, d_logit, d_sigma, pairwise_sum(dk), pairwise_sum(dx));
  const auto flat = flatten_trainable(res.gradient);
  for (std::size_t i = 0; i < flat.size(); ++i)
    if (!std::isfinite(flat[i]))
      throw NumericalError("gradient: non-finite value at " + trainable_path(res.gradient, i));
  return res;
}

[[nodiscard]] inline NetworkParameters gradient(const TrainingBatch& batch, const NetworkParameters& params,
                                                const LossConfig& cfg, std::uint64_t dropout_seed) {
  return loss_and_gradient(batch, params, cfg, dropout_seed).gradient;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double decay_factor = 0.95;
  std::uint64_t decay_every = 50'000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must lie in (0, 1]");
    if (decay_every == 0) throw ConfigError("decay_every must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
      throw ConfigError("invalid Adam constants");
  }
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  // Staircase schedule lr0 * decay^floor(step / decay_every).
  [[nodiscard]] double learning_rate() const { return learning_rate_at(step); }

  [[nodiscard]] double learning_rate_at(std::uint64_t s) const {
    return config.learning_rate * std::pow(config.decay_factor, static_cast<double>(s / config.decay_every));
  }
};

inline void adam_step(NetworkParameters& params, const NetworkParameters& grad, OptimizerState& state) {
  auto theta = flatten_trainable(params);
  const auto g = flatten_trainable(grad);
  if (g.size() != theta.size()) throw DomainError("adam_step: gradient shape does not match parameters");
  if (state.first_moment.empty()) {
    state.first_moment.assign(theta.size(), 0.0);
    state.second_moment.assign(theta.size(), 0.0);
  }
  if (state.first_moment.size() != theta.size()) throw DomainError("adam_step: optimizer state shape mismatch");
  const auto& c = state.config;
  const double lr = state.learning_rate();
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g[i];
    v = c.beta2 * v + (1.0 - c.beta2) * g[i] * g[i];
    theta[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
  }
  assign_trainable(params, theta);
  ++state.step;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  LossConfig loss;
  AdamConfig optimizer;
  InitOptions architecture;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double train_fraction = 0.7;
  double validation_fraction = 0.3;
  // Before the first epoch: p-head bias at the training prevalence, scale
  // head at the unconditional eGPD fit of the training positives.
  bool warm_start = true;
  int threads = 0;

  void validate() const {
    loss.validate();
    optimizer.validate();
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must lie in (0, 1)");
  }
};

// Stream identifiers for seeds derived from TrainConfig::seed.
enum SeedStream : std::uint64_t { kSplitStream = 1, kInitStream = 2, kValidationStream = 3, kBatchStream = 4, kDropoutStream = 5 };

struct EpochTrace {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean per record
  double val_loss = 0.0;    // mean per record, inference mode
  double val_auc = 0.0;     // NaN if the validation subset has one class
  double val_crps = 0.0;    // mean over validation positives, NaN if none
};

struct TrainResult {
  RegressionModel model;
  std::vector<EpochTrace> trace;
  SplitIndices split;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& message, std::vector<EpochTrace> trace)
      : NumericalError(message), trace_(std::move(trace)) {}
  [[nodiscard]] const std::vector<EpochTrace>& trace() const noexcept { return trace_; }

 private:
  std::vector<EpochTrace> trace_;
};

// Model shell for a training split: schema, standardization from the split,
// response scale = median positive area density (1 when there are none).
[[nodiscard]] inline RegressionModel prepare_model(const FeatureSchema& schema, std::span<const SuYearRecord> train,
                                                   const TrainConfig& cfg) {
  RegressionModel m;
  m.schema = schema;
  m.standardization = fit_standardization(train, schema.size());
  std::vector<double> pos;
  for (const auto& r : train)
    if (r.landslide) pos.push_back(r.area_density);
  if (!pos.empty()) {
    std::sort(pos.begin(), pos.end());
    m.response_scale = interpolated_quantile(pos, 0.5);
  }
  m.network = init_parameters(schema.size(), derive_seed(cfg.seed, {kInitStream}), cfg.architecture);
  return m;
}

inline void warm_start(RegressionModel& m, std::span<const SuYearRecord> train) {
  std::vector<double> pos;
  for (const auto& r : train)
    if (r.landslide) pos.push_back(r.area_density / m.response_scale);
  const double prevalence = static_cast<double>(pos.size()) / static_cast<double>(std::max<std::size_t>(train.size(), 1));
  if (prevalence > 0.0 && prevalence < 1.0) m.network.head_p.bias = std::log(prevalence / (1.0 - prevalence));
  if (pos.size() >= 2) {
    try {
      const auto fit = egpd_fit_mle(pos, {1.0, 1.0, 0.5});
      m.network.head_sigma.weight.setZero();
      m.network.head_sigma.bias = fit.params.sigma;
      m.network.log_kappa = std::log(fit.params.kappa);
      m.network.log_xi = std::log(fit.params.xi);
    } catch (const ConvergenceError&) {
      m.network.head_sigma.weight.setZero();
      m.network.head_sigma.bias = 1.0;
    }
  } else {
    m.network.head_sigma.bias = 1.0;
  }
}

struct ValidationMetrics {
  double loss = 0.0;  // mean per record
  double auc = std::numeric_limits<double>::quiet_NaN();
  double crps = std::numeric_limits<double>::quiet_NaN();
};

[[nodiscard]] inline ValidationMetrics validation_metrics(const RegressionModel& m, std::span<const SuYearRecord> records,
                                                          const LossConfig& cfg, unsigned threads, bool with_crps = true) {
  ValidationMetrics v;
  if (records.empty()) return v;
  const auto batch = make_batch(m, records);
  v.loss = batch_loss(batch, m.network, cfg, Mode::inference, 0) / static_cast<double>(records.size());
  const auto outputs = m.predict(batch.features);
  std::vector<double> scores, sigmas, areas;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    scores.push_back(outputs[i].p);
    if (records[i].landslide) {
      ++pos;
      sigmas.push_back(outputs[i].sigma);
      areas.push_back(records[i].area_density);
    }
  }
  if (pos > 0 && pos < records.size()) v.auc = auc(scores, batch.landslide);
  if (with_crps && !areas.empty()) v.crps = dataset_crps(sigmas, areas, m.kappa(), m.xi(), threads).mean;
  return v;
}

// Trains on the training part of a seeded split of `data`. Each epoch holds
// out a freshly drawn validation subset of the training part, runs Adam over
// seeded random batches of the rest, and scores the validation subset; the
// parameters with the lowest validation loss are returned.
[[nodiscard]] inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.records.empty()) throw DataError("train: empty dataset");
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    if (r.covariates.size() != data.schema.size()) throw DataError("train: record width does not match schema");
    detail::check_consistency(r.landslide, r.area_density, i);
  }
  const unsigned threads = resolve_threads(cfg.threads);
  TrainResult res;
  res.split = split_indices(data.records.size(), cfg.train_fraction, derive_seed(cfg.seed, {kSplitStream}));
  const auto train_set = select(data.records, res.split.train);
  if (train_set.empty()) throw DataError("train: training split is empty");
  res.model = prepare_model(data.schema, train_set, cfg);
  if (cfg.epochs == 0) return res;
  if (cfg.warm_start) warm_start(res.model, train_set);

  auto& net = res.model.network;
  NetworkParameters best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  OptimizerState opt;
  opt.config = cfg.optimizer;
  const auto n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(train_set.size()))));
  const bool has_fit_part = train_set.size() > n_val;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(cfg.seed, {kValidationStream, epoch})).shuffle(order.begin(), order.end());
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    if (!has_fit_part) fit_idx = val_idx;
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(fit_idx.begin(), fit_idx.end());
    Rng(derive_seed(cfg.seed, {kBatchStream, epoch})).shuffle(fit_idx.begin(), fit_idx.end());

    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < fit_idx.size(); start += cfg.loss.batch_size, ++batch_no) {
      const std::size_t stop = std::min(start + cfg.loss.batch_size, fit_idx.size());
      const auto records = select(train_set, std::span(fit_idx).subspan(start, stop - start));
      const auto batch = make_batch(res.model, records);
      auto lg = loss_and_gradient(batch, net, cfg.loss, derive_seed(cfg.seed, {kDropoutStream, epoch, batch_no}));
      if (!std::isfinite(lg.loss)) {
        res.trace.push_back({epoch, lg.loss, NAN, NAN, NAN});
        throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch), res.trace);
      }
      epoch_loss += lg.loss;
      update_running_statistics(net, lg.cache);
      adam_step(net, lg.gradient, opt);
    }

    const auto val_records = select(train_set, val_idx);
    const auto vm = validation_metrics(res.model, val_records, cfg.loss, threads);
    res.trace.push_back({epoch, epoch_loss / static_cast<double>(fit_idx.size()), vm.loss, vm.auc, vm.crps});
    if (!std::isfinite(vm.loss)) throw DivergenceError("train: non-finite validation loss in epoch " + std::to_string(epoch), res.trace);
    if (vm.loss < best_loss) {
      best_loss = vm.loss;
      best = net;
      res.best_epoch = epoch;
    }
  }
  net = std::move(best);
  return res;
}

inline void write_trace_csv(std::span<const EpochTrace> trace, const std::string& path) {
  csv::Writer w(path);
  w.row({"epoch", "train_loss", "val_loss", "val_auc", "val_crps"});
  for (const auto& t : trace)
    w.row({std::to_string(t.epoch), csv::format_double(t.train_loss), csv::format_double(t.val_loss),
           csv::format_double(t.val_auc), csv::format_double(t.val_crps)});
}

// ---------------------------------------------------------------------------
// Gamma sweep

[[nodiscard]] inline std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int k = 30; k <= 70; k += 5) g.push_back(k / 100.0);
  return g;
}

struct GammaResult {
  double gamma = 0.0;
  bool ok = false;
  std::string error;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double crps_mean = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
};

struct GammaTuning {
  double best_gamma = std::numeric_limits<double>::quiet_NaN();
  std::vector<GammaResult> results;
};

// One model per grid value, each scored on the held-out split of its own
// training run (same seed, hence the same split). Lowest mean CRPS wins;
// AUC breaks ties. A failing grid point is recorded and the sweep goes on.
[[nodiscard]] inline GammaTuning tune_gamma(const Dataset& data, const TrainConfig& base, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("tune_gamma: empty grid");
  for (double g : grid)
    if (!(g > 0.0 && g < 1.0)) throw ConfigError("tune_gamma: grid values must lie in (0, 1)");
  GammaTuning out;
  const unsigned threads = resolve_threads(base.threads);
  for (double g : grid) {
    GammaResult r;
    r.gamma = g;
    try {
      TrainConfig cfg = base;
      cfg.loss.gamma = g;
      const auto tr = train(data, cfg);
      auto held_out = select(data.records, tr.split.test);
      if (held_out.empty()) held_out = select(data.records, tr.split.train);
      const auto vm = validation_metrics(tr.model, held_out, cfg.loss, threads);
      r.auc = vm.auc;
      r.crps_mean = vm.crps;
      r.loss = vm.loss;
      r.ok = true;
    } catch (const Error& e) {
      r.error = e.what();
    }
    out.results.push_back(r);
  }
  const GammaResult* best = nullptr;
  auto crps_key = [](const GammaResult& r) { return std::isnan(r.crps_mean) ? std::numeric_limits<double>::infinity() : r.crps_mean; };
  auto auc_key = [](const GammaResult& r) { return std::isnan(r.auc) ? -1.0 : r.auc; };
  for (const auto& r : out.results) {
    if (!r.ok) continue;
    if (!best || crps_key(r) < crps_key(*best) || (crps_key(r) == crps_key(*best) && auc_key(r) > auc_key(*best)))
      best = &r;
  }
  if (best) out.best_gamma = best->gamma;
  return out;
}

}  // namespace lshazard
