#pragma once

// Extended generalized Pareto distribution (eGPD)
//
//   F(x; kappa, sigma, xi) = {1 - (1 + xi x / sigma)^(-1/xi)}^kappa,  x > 0,
//
// with lower-tail shape kappa > 0, scale sigma > 0 and upper-tail shape
// xi > 0. kappa = 1 gives the generalized Pareto distribution.
//
// All evaluations go through log t = -(1/xi) log1p(xi x / sigma), the log of
// the GPD survival function, so that neither tail loses precision.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lshazard/error.hpp"
#include "lshazard/numeric.hpp"
#include "lshazard/optimize.hpp"
#include "lshazard/rng.hpp"

namespace lshazard {

struct EgpdParams {
  double kappa = 1.0;
  double sigma = 1.0;
  double xi = 0.5;

  [[nodiscard]] bool valid() const noexcept {
    return std::isfinite(kappa) && std::isfinite(sigma) && std::isfinite(xi) && kappa > 0.0 &&
           sigma > 0.0 && xi > 0.0;
  }

  void validate() const {
    if (!valid())
      throw DomainError("invalid eGPD parameters (kappa=" + std::to_string(kappa) +
                        ", sigma=" + std::to_string(sigma) + ", xi=" + std::to_string(xi) +
                        "); all must be finite and positive");
  }

  friend bool operator==(const EgpdParams&, const EgpdParams&) = default;
};

namespace detail {

// log of the GPD survival term t = (1 + xi x / sigma)^(-1/xi).
[[nodiscard]] inline double log_gpd_survival(double x, const EgpdParams& p) noexcept {
  return -std::log1p(p.xi * x / p.sigma) / p.xi;
}

// log(1 - t) given log t, accurate for t near 0 and near 1.
[[nodiscard]] inline double log_one_minus(double log_t) noexcept {
  const double t = std::exp(log_t);
  return t < 0.5 ? std::log1p(-t) : std::log(-std::expm1(log_t));
}

// log F(x) for x >= 0.
[[nodiscard]] inline double log_cdf(double x, const EgpdParams& p) noexcept {
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  return p.kappa * log_one_minus(log_gpd_survival(x, p));
}

// Quantile from log u, u in (0, 1).
[[nodiscard]] inline double quantile_from_log(double log_u, const EgpdParams& p) noexcept {
  // log(1 - u^(1/kappa))
  const double log_base = log_one_minus(log_u / p.kappa);
  return p.sigma / p.xi * std::expm1(-p.xi * log_base);
}

inline void check_x(double x, const char* op) {
  if (!(x >= 0.0) || std::isnan(x))
    throw DomainError(std::string(op) + ": x must be nonnegative, got " + std::to_string(x));
}

inline void check_positive_x(double x, const char* op) {
  if (!(x > 0.0) || std::isnan(x))
    throw DomainError(std::string(op) + ": x must be positive, got " + std::to_string(x));
}

}  // namespace detail

[[nodiscard]] inline double egpd_cdf(double x, const EgpdParams& p) {
  detail::check_x(x, "egpd_cdf");
  p.validate();
  if (std::isinf(x)) return 1.0;
  return std::exp(detail::log_cdf(x, p));
}

// 1 - F(x), computed without cancellation when F(x) is close to one.
[[nodiscard]] inline double egpd_survival(double x, const EgpdParams& p) {
  detail::check_x(x, "egpd_survival");
  p.validate();
  if (std::isinf(x)) return 0.0;
  return -std::expm1(detail::log_cdf(x, p));
}

[[nodiscard]] inline double egpd_logpdf(double x, const EgpdParams& p) {
  detail::check_positive_x(x, "egpd_logpdf");
  p.validate();
  const double log1pz = std::log1p(p.xi * x / p.sigma);
  const double log_b = detail::log_one_minus(-log1pz / p.xi);
  return std::log(p.kappa) - std::log(p.sigma) - (1.0 / p.xi + 1.0) * log1pz +
         (p.kappa - 1.0) * log_b;
}

[[nodiscard]] inline double egpd_pdf(double x, const EgpdParams& p) {
  return std::exp(egpd_logpdf(x, p));
}

// Log-density together with its partial derivatives.
struct LogpdfDerivatives {
  double value = 0.0;
  double d_log_kappa = 0.0;
  double d_sigma = 0.0;
  double d_log_sigma = 0.0;
  double d_log_xi = 0.0;
};

[[nodiscard]] inline LogpdfDerivatives egpd_logpdf_derivatives(double x, const EgpdParams& p) {
  detail::check_positive_x(x, "egpd_logpdf_derivatives");
  p.validate();
  const double k = p.kappa;
  const double xi = p.xi;
  const double z = xi * x / p.sigma;
  const double log1pz = std::log1p(z);
  const double log_t = -log1pz / xi;
  const double t = std::exp(log_t);
  const double b = -std::expm1(log_t);
  const double log_b = detail::log_one_minus(log_t);
  const double t_over_b = t / b;
  const double zr = z / (1.0 + z);

  LogpdfDerivatives d;
  d.value = std::log(k) - std::log(p.sigma) - (1.0 / xi + 1.0) * log1pz + (k - 1.0) * log_b;
  d.d_log_kappa = 1.0 + k * log_b;
  d.d_log_sigma = -1.0 + (1.0 / xi + 1.0) * zr - (k - 1.0) * t_over_b * zr / xi;
  d.d_sigma = d.d_log_sigma / p.sigma;
  d.d_log_xi = log1pz / xi - (1.0 / xi + 1.0) * zr - (k - 1.0) * t_over_b * (log1pz - zr) / xi;
  return d;
}

[[nodiscard]] inline double egpd_quantile(double u, const EgpdParams& p) {
  if (!(u > 0.0 && u < 1.0))
    throw DomainError("egpd_quantile: probability must lie in (0, 1), got " + std::to_string(u));
  p.validate();
  return detail::quantile_from_log(std::log(u), p);
}

// Upper-tail quantile: the x with 1 - F(x) = s.
[[nodiscard]] inline double egpd_survival_quantile(double s, const EgpdParams& p) {
  if (!(s > 0.0 && s < 1.0))
    throw DomainError("egpd_survival_quantile: probability must lie in (0, 1), got " +
                      std::to_string(s));
  p.validate();
  return detail::quantile_from_log(std::log1p(-s), p);
}

// Inverse-transform sampling; deterministic for a fixed seed.
[[nodiscard]] inline std::vector<double> egpd_sample(std::size_t n, const EgpdParams& p,
                                                     std::uint64_t seed) {
  if (n == 0) throw DomainError("egpd_sample: n must be at least 1");
  p.validate();
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = detail::quantile_from_log(std::log(rng.uniform()), p);
  return out;
}

// eGPD renormalized to the unit interval: F(x) / F(1) on [0, 1].
[[nodiscard]] inline double egpd_truncated_cdf(double x, const EgpdParams& p) {
  if (!(x >= 0.0 && x <= 1.0))
    throw DomainError("egpd_truncated_cdf: x must lie in [0, 1], got " + std::to_string(x));
  p.validate();
  if (x == 1.0) return 1.0;
  if (x == 0.0) return 0.0;
  return std::exp(detail::log_cdf(x, p) - detail::log_cdf(1.0, p));
}

[[nodiscard]] inline double egpd_nll(std::span<const double> data, const EgpdParams& p) {
  std::vector<double> terms(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) terms[i] = -egpd_logpdf(data[i], p);
  return pairwise_sum(terms);
}

struct EgpdFit {
  EgpdParams params;
  double nll = 0.0;       // at the returned parameters
  double init_nll = 0.0;  // at the starting parameters
  int iterations = 0;
  double gradient_norm = 0.0;  // of the mean log-likelihood in log-parameter space
};

struct EgpdFitOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 10000;
};

// Maximum-likelihood fit in (log kappa, log sigma, log xi). The objective is
// the mean log-likelihood so the gradient tolerance is independent of n.
// Throws ConvergenceError (with the final iterate and gradient norm) when the
// data are degenerate or the optimizer does not converge.
[[nodiscard]] inline EgpdFit egpd_fit_mle(std::span<const double> data, const EgpdParams& init,
                                          const EgpdFitOptions& options = {}) {
  init.validate();
  if (data.empty()) throw DataError("egpd_fit_mle: empty data");
  for (double v : data)
    if (!(v > 0.0) || !std::isfinite(v))
      throw DataError("egpd_fit_mle: data must be finite and positive");

  const std::vector<double> x0{std::log(init.kappa), std::log(init.sigma), std::log(init.xi)};
  bool constant = true;
  for (double v : data) constant = constant && v == data.front();
  if (constant)
    throw ConvergenceError(
        "egpd_fit_mle: fewer than two distinct values; the likelihood is unbounded "
        "(boundary solution)",
        x0, std::numeric_limits<double>::infinity());

  const double inv_n = 1.0 / static_cast<double>(data.size());
  std::vector<double> terms(data.size()), gk(data.size()), gs(data.size()), gx(data.size());
  auto objective = [&](const std::vector<double>& x, std::vector<double>& grad) {
    const EgpdParams p{std::exp(x[0]), std::exp(x[1]), std::exp(x[2])};
    if (!p.valid()) return std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto d = egpd_logpdf_derivatives(data[i], p);
      terms[i] = d.value;
      gk[i] = d.d_log_kappa;
      gs[i] = d.d_log_sigma;
      gx[i] = d.d_log_xi;
    }
    grad[0] = pairwise_sum(gk) * inv_n;
    grad[1] = pairwise_sum(gs) * inv_n;
    grad[2] = pairwise_sum(gx) * inv_n;
    return pairwise_sum(terms) * inv_n;
  };

  optimize::AscentOptions opts;
  opts.gradient_tolerance = options.gradient_tolerance;
  opts.max_iterations = options.max_iterations;
  const auto res = optimize::maximize(objective, x0, opts);
  if (!res.converged)
    throw ConvergenceError("egpd_fit_mle: " + res.reason + " after " +
                               std::to_string(res.iterations) +
                               " iterations (gradient norm " +
                               std::to_string(res.gradient_norm) + ")",
                           res.x, res.gradient_norm);

  EgpdFit fit;
  fit.params = EgpdParams{std::exp(res.x[0]), std::exp(res.x[1]), std::exp(res.x[2])};
  fit.nll = egpd_nll(data, fit.params);
  fit.init_nll = egpd_nll(data, init);
  fit.iterations = res.iterations;
  fit.gradient_norm = res.gradient_norm;
  return fit;
}

}  // namespace lshazard
