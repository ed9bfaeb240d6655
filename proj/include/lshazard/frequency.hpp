#pragma once

// Trigger-frequency models: per-site eGPD fits of yearly precipitation with
// shapes shared across sites, return levels, and analogue-year selection for
// the precipitation standard deviation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lshazard/csv.hpp"
#include "lshazard/data_io.hpp"
#include "lshazard/egpd.hpp"
#include "lshazard/numeric.hpp"
#include "lshazard/optimize.hpp"

namespace lshazard {

enum class FrequencyVariable { annual_max, annual_mean };

[[nodiscard]] inline std::string to_string(FrequencyVariable v) {
  return v == FrequencyVariable::annual_max ? "annual_max" : "annual_mean";
}

[[nodiscard]] inline FrequencyVariable frequency_variable_from_string(const std::string& s) {
  if (s == "annual_max") return FrequencyVariable::annual_max;
  if (s == "annual_mean") return FrequencyVariable::annual_mean;
  throw ConfigError("unknown frequency variable '" + s + "'");
}

struct TriggerFrequencyModel {
  double kappa = 1.0;  // shared
  double xi = 0.1;     // shared
  std::map<std::string, double> sigma;
  FrequencyVariable variable = FrequencyVariable::annual_max;
  double n_y = 1.0;  // observations per year

  [[nodiscard]] EgpdParams params(const std::string& site) const {
    const auto it = sigma.find(site);
    if (it == sigma.end()) throw DomainError("frequency model has no site '" + site + "'");
    return {kappa, it->second, xi};
  }
};

struct FrequencyFitOptions {
  double gradient_tolerance = 1e-7;  // on the pooled mean log-likelihood
  int max_alternations = 2000;
  std::size_t min_years = 5;
};

struct FrequencyFit {
  TriggerFrequencyModel model;
  std::vector<double> log_likelihood;  // pooled, after each alternation
  int alternations = 0;
  double gradient_norm = 0.0;
};

namespace detail {

struct PooledGradient {
  double value = 0.0;  // mean log-likelihood
  std::map<std::string, double> d_log_sigma;
  double d_log_kappa = 0.0;
  double d_log_xi = 0.0;

  [[nodiscard]] double norm() const {
    double m = std::max(std::abs(d_log_kappa), std::abs(d_log_xi));
    for (const auto& [_, g] : d_log_sigma) m = std::max(m, std::abs(g));
    return m;
  }
};

inline PooledGradient pooled_gradient(const std::map<std::string, std::vector<double>>& series,
                                      const TriggerFrequencyModel& m, double inv_n) {
  PooledGradient g;
  std::vector<double> vals, dk, dx;
  for (const auto& [site, xs] : series) {
    const EgpdParams p = m.params(site);
    std::vector<double> ds;
    for (double x : xs) {
      const auto d = egpd_logpdf_derivatives(x, p);
      vals.push_back(d.value);
      dk.push_back(d.d_log_kappa);
      dx.push_back(d.d_log_xi);
      ds.push_back(d.d_log_sigma);
    }
    g.d_log_sigma[site] = pairwise_sum(ds) * inv_n;
  }
  g.value = pairwise_sum(vals) * inv_n;
  g.d_log_kappa = pairwise_sum(dk) * inv_n;
  g.d_log_xi = pairwise_sum(dx) * inv_n;
  return g;
}

}  // namespace detail

// Maximum likelihood for X(s, t) ~ eGPD(kappa, sigma(s), xi), by alternating
// per-site scale updates with shared-shape updates. Each phase is a monotone
// ascent, so the pooled likelihood never decreases across alternations.
// Starting values come from one eGPD fit of the data divided by site medians.
[[nodiscard]] inline FrequencyFit fit_frequency(const std::map<std::string, std::vector<double>>& series,
                                                FrequencyVariable variable = FrequencyVariable::annual_max,
                                                const FrequencyFitOptions& opt = {}) {
  if (series.empty()) throw DataError("fit_frequency: no sites");
  std::vector<Issue> issues;
  std::size_t n = 0;
  for (const auto& [site, xs] : series) {
    if (xs.size() < opt.min_years)
      issues.push_back({0, "site " + site + " has " + std::to_string(xs.size()) + " yearly values (at least " +
                               std::to_string(opt.min_years) + " required)"});
    if (std::any_of(xs.begin(), xs.end(), [](double x) { return !(x > 0.0) || !std::isfinite(x); }))
      issues.push_back({0, "site " + site + " has non-positive values"});
    n += xs.size();
  }
  if (!issues.empty()) throw DataError("fit_frequency: invalid series", std::move(issues));
  for (const auto& [site, xs] : series)
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); }))
      throw ConvergenceError("fit_frequency: site " + site + " has a constant series; its scale is not identifiable",
                             {}, std::numeric_limits<double>::infinity());

  FrequencyFit fit;
  auto& m = fit.model;
  m.variable = variable;
  std::map<std::string, double> medians;
  std::vector<double> normalized;
  for (const auto& [site, xs] : series) {
    std::vector<double> s(xs);
    std::sort(s.begin(), s.end());
    medians[site] = interpolated_quantile(s, 0.5);
    for (double x : xs) normalized.push_back(x / medians[site]);
  }
  const auto start = egpd_fit_mle(normalized, {1.0, 1.0, 0.1});
  m.kappa = start.params.kappa;
  m.xi = start.params.xi;
  for (const auto& [site, med] : medians) m.sigma[site] = start.params.sigma * med;

  const double inv_n = 1.0 / static_cast<double>(n);
  optimize::AscentOptions ascent;
  ascent.gradient_tolerance = 0.1 * opt.gradient_tolerance;

  auto fail = [&](const std::string& phase, const optimize::AscentResult& r) {
    throw ConvergenceError("fit_frequency: " + phase + " update: " + r.reason, r.x, r.gradient_norm);
  };

  double previous = -std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opt.max_alternations; ++it) {
    // Scale phase; the sites decouple given the shapes.
    for (const auto& [site, xs] : series) {
      auto objective = [&, xs_ptr = &xs](const std::vector<double>& x, std::vector<double>& g) {
        const EgpdParams p{m.kappa, std::exp(x[0]), m.xi};
        if (!p.valid()) return std::numeric_limits<double>::quiet_NaN();
        std::vector<double> v, d;
        for (double a : *xs_ptr) {
          const auto r = egpd_logpdf_derivatives(a, p);
          v.push_back(r.value);
          d.push_back(r.d_log_sigma);
        }
        g[0] = pairwise_sum(d) * inv_n;
        return pairwise_sum(v) * inv_n;
      };
      const auto r = optimize::maximize(objective, {std::log(m.sigma[site])}, ascent);
      if (!r.converged) fail("scale (site " + site + ")", r);
      m.sigma[site] = std::exp(r.x[0]);
    }
    // Shape phase.
    auto shape_objective = [&](const std::vector<double>& x, std::vector<double>& g) {
      TriggerFrequencyModel trial = m;
      trial.kappa = std::exp(x[0]);
      trial.xi = std::exp(x[1]);
      if (!EgpdParams{trial.kappa, 1.0, trial.xi}.valid()) return std::numeric_limits<double>::quiet_NaN();
      const auto pg = detail::pooled_gradient(series, trial, inv_n);
      g[0] = pg.d_log_kappa;
      g[1] = pg.d_log_xi;
      return pg.value;
    };
    const auto r = optimize::maximize(shape_objective, {std::log(m.kappa), std::log(m.xi)}, ascent);
    if (!r.converged) fail("shape", r);
    m.kappa = std::exp(r.x[0]);
    m.xi = std::exp(r.x[1]);

    const auto pg = detail::pooled_gradient(series, m, inv_n);
    fit.log_likelihood.push_back(pg.value * static_cast<double>(n));
    fit.alternations = it;
    fit.gradient_norm = pg.norm();
    if (fit.gradient_norm < opt.gradient_tolerance) return fit;
    // No progress left at double precision.
    if (pg.value - previous <= 1e-15 * std::abs(pg.value) && fit.gradient_norm < 100 * opt.gradient_tolerance)
      return fit;
    previous = pg.value;
  }
  throw ConvergenceError("fit_frequency: alternation limit reached (gradient norm " +
                             std::to_string(fit.gradient_norm) + ")",
                         {std::log(m.kappa), std::log(m.xi)}, fit.gradient_norm);
}

// Level exceeded on average once in P years: the eGPD quantile at
// 1 - 1/(P n_y) under the site's parameters.
[[nodiscard]] inline double return_level(const TriggerFrequencyModel& model, const std::string& site, double period) {
  if (!(period >= 1.0) || !std::isfinite(period)) throw DomainError("return_level: period must be at least 1 year");
  const double u = 1.0 - 1.0 / (period * model.n_y);
  if (!(u > 0.0)) throw DomainError("return_level: non-exceedance probability 0 is outside (0, 1)");
  return egpd_quantile(u, model.params(site));
}

// ---------------------------------------------------------------------------
// Analogue years

struct ObservedYear {
  int year = 0;
  double mean = 0.0;
  double max = 0.0;
  double sd = 0.0;
};

struct AnalogueYear {
  int year = 0;
  double sd = 0.0;
  double distance = 0.0;
};

// Year whose (mean, max) pair is closest in Euclidean distance to the target;
// among equidistant years the latest wins.
[[nodiscard]] inline AnalogueYear analogue_year(std::span<const ObservedYear> observed, double target_mean,
                                                double target_max) {
  if (observed.empty()) throw DataError("analogue_year: no observed years");
  AnalogueYear best;
  best.distance = std::numeric_limits<double>::infinity();
  for (const auto& y : observed) {
    const double d = std::hypot(y.mean - target_mean, y.max - target_max);
    if (d < best.distance || (d == best.distance && y.year > best.year)) best = {y.year, y.sd, d};
  }
  return best;
}

struct PrecipitationRecord {
  std::string site_id;
  int year = 0;
  double precip_mean = 0.0;
  double precip_max = 0.0;
  double precip_sd = 0.0;
};

[[nodiscard]] inline std::map<std::string, std::vector<double>> series_by_site(std::span<const PrecipitationRecord> recs,
                                                                              FrequencyVariable v) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& r : recs) out[r.site_id].push_back(v == FrequencyVariable::annual_max ? r.precip_max : r.precip_mean);
  return out;
}

// Study-area series: per year, the average over sites of mean, max and sd.
[[nodiscard]] inline std::vector<ObservedYear> area_aggregate(std::span<const PrecipitationRecord> recs) {
  std::map<int, std::vector<const PrecipitationRecord*>> by_year;
  for (const auto& r : recs) by_year[r.year].push_back(&r);
  std::vector<ObservedYear> out;
  for (const auto& [year, rs] : by_year) {
    ObservedYear y{year, 0.0, 0.0, 0.0};
    for (const auto* r : rs) {
      y.mean += r->precip_mean;
      y.max += r->precip_max;
      y.sd += r->precip_sd;
    }
    const auto k = static_cast<double>(rs.size());
    y.mean /= k;
    y.max /= k;
    y.sd /= k;
    out.push_back(y);
  }
  return out;
}

[[nodiscard]] inline std::vector<PrecipitationRecord> parse_precipitation(const csv::Table& t,
                                                                    const std::string& source = "precipitation table") {
  const auto c_site = t.require_column("site_id", source), c_year = t.require_column("year", source),
             c_mean = t.require_column("precip_mean", source), c_max = t.require_column("precip_max", source),
             c_sd = t.require_column("precip_sd", source);
  std::vector<PrecipitationRecord> out;
  std::vector<Issue> issues;
  std::set<std::pair<std::string, int>> seen;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      PrecipitationRecord r{row.at(c_site), csv::field_int(row, c_year, "year"),
                            csv::field_double(row, c_mean, "precip_mean"), csv::field_double(row, c_max, "precip_max"),
                            csv::field_double(row, c_sd, "precip_sd")};
      if (!(r.precip_mean > 0.0) || !(r.precip_max > 0.0) || !(r.precip_sd >= 0.0))
        issues.push_back({i + 1, "precipitation values must be positive"});
      else if (!seen.insert({r.site_id, r.year}).second)
        issues.push_back({i + 1, "duplicate site-year " + r.site_id + "/" + std::to_string(r.year)});
      else
        out.push_back(std::move(r));
    } catch (const std::exception& e) {
      issues.push_back({i + 1, e.what()});
    }
  }
  if (!issues.empty()) throw DataError(source + ": invalid rows", std::move(issues));
  return out;
}

[[nodiscard]] inline std::vector<PrecipitationRecord> load_precipitation(const std::string& path) {
  return parse_precipitation(csv::read_file(path), path);
}

inline void write_precipitation(std::span<const PrecipitationRecord> recs, const std::string& path) {
  csv::Writer w(path);
  w.row({"site_id", "year", "precip_mean", "precip_max", "precip_sd"});
  for (const auto& r : recs)
    w.row({r.site_id, std::to_string(r.year), csv::format_double(r.precip_mean), csv::format_double(r.precip_max),
           csv::format_double(r.precip_sd)});
}

// ---------------------------------------------------------------------------
// Return-level sets

struct ReturnLevelSet {
  std::string site_id;
  double return_period = 0.0;
  double rl_max = 0.0;
  double rl_mean = 0.0;
  int analogue_year = 0;
  double analogue_sd = 0.0;
  bool max_below_mean = false;  // suspicious fit, reported rather than rejected
};

// One set per (site, period). The analogue year is chosen once per period
// against the site-averaged return levels.
[[nodiscard]] inline std::vector<ReturnLevelSet> build_return_level_sets(const TriggerFrequencyModel& max_model,
                                                                         const TriggerFrequencyModel& mean_model,
                                                                         std::span<const ObservedYear> observed,
                                                                         std::span<const double> periods) {
  std::vector<Issue> issues;
  for (const auto& [site, _] : max_model.sigma)
    if (!mean_model.sigma.count(site)) issues.push_back({0, "site " + site + " missing from the annual-mean model"});
  for (const auto& [site, _] : mean_model.sigma)
    if (!max_model.sigma.count(site)) issues.push_back({0, "site " + site + " missing from the annual-max model"});
  if (!issues.empty()) throw DataError("build_return_level_sets: site coverage mismatch", std::move(issues));
  if (max_model.sigma.empty()) return {};

  std::vector<ReturnLevelSet> out;
  for (double P : periods) {
    std::vector<ReturnLevelSet> sets;
    double sum_max = 0.0, sum_mean = 0.0;
    for (const auto& [site, _] : max_model.sigma) {
      ReturnLevelSet s;
      s.site_id = site;
      s.return_period = P;
      s.rl_max = return_level(max_model, site, P);
      s.rl_mean = return_level(mean_model, site, P);
      s.max_below_mean = s.rl_max < s.rl_mean;
      sum_max += s.rl_max;
      sum_mean += s.rl_mean;
      sets.push_back(s);
    }
    const auto k = static_cast<double>(sets.size());
    const auto a = analogue_year(observed, sum_mean / k, sum_max / k);
    for (auto& s : sets) {
      s.analogue_year = a.year;
      s.analogue_sd = a.sd;
      out.push_back(std::move(s));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.site_id < y.site_id; });
  return out;
}

inline void write_return_levels_csv(std::span<const ReturnLevelSet> sets, const std::string& path) {
  csv::Writer w(path);
  w.row({"site_id", "return_period", "rl_mean", "rl_max", "analogue_year", "analogue_sd"});
  for (const auto& s : sets)
    w.row({s.site_id, csv::format_label(s.return_period), csv::format_double(s.rl_mean), csv::format_double(s.rl_max),
           std::to_string(s.analogue_year), csv::format_double(s.analogue_sd)});
}

[[nodiscard]] inline std::vector<ReturnLevelSet> read_return_levels_csv(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto c_site = t.require_column("site_id", path), c_p = t.require_column("return_period", path),
             c_mean = t.require_column("rl_mean", path), c_max = t.require_column("rl_max", path),
             c_year = t.require_column("analogue_year", path), c_sd = t.require_column("analogue_sd", path);
  std::vector<ReturnLevelSet> out;
  std::vector<Issue> issues;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      ReturnLevelSet s;
      s.site_id = row.at(c_site);
      s.return_period = csv::field_double(row, c_p, "return_period");
      s.rl_mean = csv::field_double(row, c_mean, "rl_mean");
      s.rl_max = csv::field_double(row, c_max, "rl_max");
      s.analogue_year = csv::field_int(row, c_year, "analogue_year");
      s.analogue_sd = csv::field_double(row, c_sd, "analogue_sd");
      s.max_below_mean = s.rl_max < s.rl_mean;
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      issues.push_back({i + 1, e.what()});
    }
  }
  if (!issues.empty()) throw DataError(path + ": invalid rows", std::move(issues));
  return out;
}

[[nodiscard]] inline json frequency_to_json(const TriggerFrequencyModel& m) {
  json sig = json::object();
  for (const auto& [site, s] : m.sigma) sig[site] = s;
  return {{"variable", to_string(m.variable)}, {"kappa", m.kappa}, {"xi", m.xi}, {"n_y", m.n_y}, {"sigma", sig}};
}

[[nodiscard]] inline TriggerFrequencyModel frequency_from_json(const json& j) {
  try {
    TriggerFrequencyModel m;
    m.variable = frequency_variable_from_string(j.at("variable").get<std::string>());
    m.kappa = j.at("kappa").get<double>();
    m.xi = j.at("xi").get<double>();
    m.n_y = j.value("n_y", 1.0);
    for (const auto& [site, s] : j.at("sigma").items()) m.sigma[site] = s.get<double>();
    if (!EgpdParams{m.kappa, 1.0, m.xi}.valid()) throw DataError("frequency model: shapes must be positive");
    for (const auto& [site, s] : m.sigma)
      if (!(s > 0.0)) throw DataError("frequency model: scale of site " + site + " must be positive");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("frequency model: ") + e.what());
  }
}

}  // namespace lshazard
