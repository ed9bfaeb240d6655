#pragma once

// Probabilistic and classification diagnostics: ROC/AUC for occurrence,
// CRPS and PIT-pooled Q-Q data for the area-density distribution.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "lshazard/csv.hpp"
#include "lshazard/egpd.hpp"
#include "lshazard/model.hpp"
#include "lshazard/numeric.hpp"

namespace lshazard {

// ---------------------------------------------------------------------------
// ROC / AUC

struct RocPoint {
  double false_positive_rate = 0.0;
  double true_positive_rate = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auc = 0.5;
};

// AUC as the normalized Mann-Whitney U statistic (ties count one half), and
// the ROC curve from a sweep over the distinct scores.
[[nodiscard]] inline RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DomainError("auc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw DomainError("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DomainError("auc: needs at least one positive and one negative label");
  for (double s : scores)
    if (std::isnan(s)) throw DomainError("auc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  // Midranks, 1-based.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) pos_in_group += labels[order[j++]];
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    positive_rank_sum += midrank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  RocCurve roc;
  roc.auc = (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

  // Threshold sweep from the highest score down.
  roc.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = order.size(); k > 0;) {
    const double s = scores[order[k - 1]];
    while (k > 0 && scores[order[k - 1]] == s) {
      if (labels[order[k - 1]]) ++tp; else ++fp;
      --k;
    }
    roc.points.push_back({static_cast<double>(fp) / nn, static_cast<double>(tp) / np});
  }
  return roc;
}

[[nodiscard]] inline double auc(std::span<const double> scores, std::span<const int> labels) {
  return roc_auc(scores, labels).auc;
}

// ---------------------------------------------------------------------------
// CRPS

struct CrpsOptions {
  double abs_tolerance = 1e-7;
  double tail_probability = 1e-10;  // truncate where 1 - F falls below this
  unsigned max_depth = 12;
};

struct CrpsResult {
  double value = 0.0;
  double error_bound = 0.0;  // quadrature error estimate plus tail bound
};

namespace detail {

// A single Gauss-Kronrod panel is accepted when its error estimate is far
// below the absolute tolerance; otherwise the segment is refined adaptively.
template <class F>
double integrate(F&& f, double a, double b, const CrpsOptions& opt, double& error) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  if (!(b > a)) return 0.0;
  const double target = 1e-3 * opt.abs_tolerance;
  double err = 0.0;
  double l1 = 0.0;
  double v = GK::integrate(f, a, b, 0, 0.0, &err, &l1);
  if (err > target) {
    const double rel = std::max(1e-13, target / std::max(l1, std::numeric_limits<double>::min()));
    v = GK::integrate(f, a, b, opt.max_depth, rel, &err);
  }
  error += err;
  return v;
}

inline void check_error(const CrpsResult& r, const CrpsOptions& opt) {
  if (!(r.error_bound <= opt.abs_tolerance) || !std::isfinite(r.value))
    throw ConvergenceError("crps: quadrature reached " + std::to_string(r.error_bound) + " against tolerance " +
                               std::to_string(opt.abs_tolerance),
                           {r.value}, r.error_bound);
}

}  // namespace detail

// CRPS(F, a) = int_0^inf {F(x) - 1(a <= x)}^2 dx for a distribution on
// [0, upper]; `upper` must be a point beyond which 1 - F is negligible.
[[nodiscard]] inline CrpsResult crps(const std::function<double(double)>& cdf, double observation, double upper,
                                     const CrpsOptions& opt = {}) {
  if (!(observation >= 0.0) || !std::isfinite(observation)) throw DomainError("crps: observation must be nonnegative");
  if (!(upper >= 0.0) || !std::isfinite(upper)) throw DomainError("crps: upper integration limit must be finite");
  CrpsResult r;
  const double lower_part =
      detail::integrate([&](double x) { const double f = cdf(x); return f * f; }, 0.0, std::min(observation, upper), opt,
                        r.error_bound);
  double upper_part = 0.0;
  if (observation < upper)
    upper_part = detail::integrate([&](double x) { const double s = 1.0 - cdf(x); return s * s; }, observation, upper, opt,
                                   r.error_bound);
  else  // support ends before the observation: F = 1 on [upper, a]
    r.value += observation - upper;
  r.value += lower_part + upper_part;
  detail::check_error(r, opt);
  return r;
}

// Analytic bound on int_T^inf (1 - F)^2 dx for the eGPD, using
// 1 - F <= max(kappa, 1) t with t the GPD survival term.
[[nodiscard]] inline double egpd_crps_tail_bound(double t_point, const EgpdParams& p) {
  const double m = std::max(p.kappa, 1.0);
  const double log_t = detail::log_gpd_survival(t_point, p);
  // int_T^inf t(x)^2 dx = sigma (1 + xi T / sigma)^(1 - 2/xi) / (2 - xi)
  return m * m * p.sigma * std::exp((2.0 - p.xi) * log_t) / (2.0 - p.xi);
}

// CRPS of an eGPD forecast. The integrand {F - 1(a <= x)}^2 is integrated
// piecewise between breakpoints at the observation, at fixed quantiles of F
// and on geometrically growing segments up to a truncation point where
// 1 - F < tail_probability and the analytic tail bound is below a tenth of
// the tolerance.
[[nodiscard]] inline CrpsResult crps_egpd(const EgpdParams& p, double observation, const CrpsOptions& opt = {}) {
  p.validate();
  if (!(observation >= 0.0) || !std::isfinite(observation)) throw DomainError("crps: observation must be nonnegative");
  if (!(p.xi < 2.0)) throw DomainError("crps: the eGPD CRPS is infinite for xi >= 2");
  CrpsResult r;
  const double a = observation;

  double truncation = std::max(a, egpd_survival_quantile(opt.tail_probability, p));
  double tail = egpd_crps_tail_bound(truncation, p);
  while (tail > 0.1 * opt.abs_tolerance && std::isfinite(truncation)) {
    truncation = 4.0 * truncation + p.sigma;
    tail = egpd_crps_tail_bound(truncation, p);
  }

  std::vector<double> cuts{0.0, a, truncation};
  for (double u : {1e-6, 1e-3, 0.05, 0.25, 0.5, 0.75, 0.95}) cuts.push_back(egpd_quantile(u, p));
  for (double s : {1e-2, 1e-3, 1e-4, 1e-6, 1e-8}) {
    const double q = egpd_survival_quantile(s, p);
    if (q < truncation) cuts.push_back(q);
  }
  for (double x = egpd_survival_quantile(1e-8, p); 4.0 * x < truncation; x *= 4.0) cuts.push_back(4.0 * x);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  auto below = [&](double x) { return x > 0.0 ? std::exp(2.0 * detail::log_cdf(x, p)) : 0.0; };
  auto above = [&](double x) {
    const double s = -std::expm1(detail::log_cdf(x, p));
    return s * s;
  };
  std::vector<double> pieces;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    if (lo == 0.0 && hi <= a) {
      // F^2 is increasing, so int_0^hi F^2 <= hi F(hi)^2; this avoids refining
      // the x^kappa behaviour at the origin when the piece is negligible.
      const double bound = hi * below(hi);
      if (bound < 1e-3 * opt.abs_tolerance) {
        pieces.push_back(0.5 * bound);
        r.error_bound += 0.5 * bound;
        continue;
      }
    }
    pieces.push_back(hi <= a ? detail::integrate(below, lo, hi, opt, r.error_bound)
                             : detail::integrate(above, lo, hi, opt, r.error_bound));
  }
  r.error_bound += tail;
  r.value = pairwise_sum(pieces);
  detail::check_error(r, opt);
  return r;
}

struct DatasetCrps {
  double total = 0.0;
  double mean = std::numeric_limits<double>::quiet_NaN();  // NaN when there are no records
  std::size_t count = 0;
  std::vector<double> per_record;
};

// Sum and mean CRPS over positive records, each scored against
// eGPD(kappa, sigma_i, xi) with sigma_i predicted by the model. Records are
// scored in parallel; the sum is a pairwise reduction in record order.
[[nodiscard]] inline DatasetCrps dataset_crps(std::span<const double> sigmas, std::span<const double> areas, double kappa,
                                              double xi, unsigned threads = 1, const CrpsOptions& opt = {}) {
  if (sigmas.size() != areas.size()) throw DomainError("dataset_crps: sigma and area counts differ");
  DatasetCrps out;
  out.count = areas.size();
  out.per_record.assign(areas.size(), 0.0);
  std::vector<std::string> failures(areas.size());
  parallel_for(areas.size(), threads, [&](std::size_t i) {
    try {
      if (!(areas[i] > 0.0)) throw DomainError("area density must be positive");
      out.per_record[i] = crps_egpd({kappa, sigmas[i], xi}, areas[i], opt).value;
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  std::vector<Issue> issues;
  for (std::size_t i = 0; i < failures.size(); ++i)
    if (!failures[i].empty()) issues.push_back({i + 1, failures[i]});
  if (!issues.empty()) throw DataError("dataset_crps: scoring failed", std::move(issues));
  out.total = pairwise_sum(out.per_record);
  if (out.count > 0) out.mean = out.total / static_cast<double>(out.count);
  return out;
}

[[nodiscard]] inline DatasetCrps dataset_crps(const RegressionModel& model, std::span<const SuYearRecord> positives,
                                              unsigned threads = 1, const CrpsOptions& opt = {}) {
  std::vector<double> sigmas, areas;
  for (const auto& r : positives) {
    if (r.landslide != 1 || !(r.area_density > 0.0))
      throw DataError("dataset_crps: record " + r.su_id + "/" + std::to_string(r.year) +
                      " is not a positive record with area density > 0");
    areas.push_back(r.area_density);
  }
  if (!positives.empty())
    for (const auto& o : model.predict(positives)) sigmas.push_back(o.sigma);
  return dataset_crps(sigmas, areas, model.kappa(), model.xi(), threads, opt);
}

// ---------------------------------------------------------------------------
// Q-Q data

struct QqPoint {
  double probability = 0.0;
  double empirical_pit = 0.0;       // empirical quantile of the PIT values
  double model_quantile = 0.0;      // reference quantile at `probability`
  double empirical_quantile = 0.0;  // reference quantile at `empirical_pit`
};

struct QqData {
  std::vector<QqPoint> points;
  std::size_t sample_size = 0;
  double ks_band = 0.0;      // 95% Kolmogorov-Smirnov half-width for sample_size
  EgpdParams reference;      // pooled reference distribution for quantile units
};

// Default probability grid: plotting positions (i - 0.5) / n for small
// samples, otherwise 0.01, 0.02, ..., 0.99.
[[nodiscard]] inline std::vector<double> default_qq_grid(std::size_t n) {
  std::vector<double> g;
  if (n > 0 && n < 99) {
    for (std::size_t i = 1; i <= n; ++i) g.push_back((static_cast<double>(i) - 0.5) / static_cast<double>(n));
  } else {
    for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  }
  return g;
}

// Q-Q points from probability-integral-transform values u_i = F_i(a_i).
// Each record has its own forecast distribution, so the PIT values are
// pooled and compared with uniform quantiles; both axes are mapped to
// area-density units through a single reference eGPD.
[[nodiscard]] inline QqData qq_from_pit(std::vector<double> pit, std::span<const double> grid, const EgpdParams& reference) {
  if (pit.empty()) throw DataError("qq_data: no records");
  reference.validate();
  std::vector<double> levels(grid.begin(), grid.end());
  if (levels.empty()) levels = default_qq_grid(pit.size());
  for (double g : levels)
    if (!(g > 0.0 && g < 1.0)) throw DomainError("qq_data: grid levels must lie in (0, 1)");
  std::sort(levels.begin(), levels.end());
  std::sort(pit.begin(), pit.end());
  QqData qq;
  qq.sample_size = pit.size();
  qq.ks_band = ks_critical_95(pit.size());
  qq.reference = reference;
  auto ref_quantile = [&](double u) {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return std::numeric_limits<double>::infinity();
    return egpd_quantile(u, reference);
  };
  for (double g : levels) {
    QqPoint pt;
    pt.probability = g;
    pt.empirical_pit = interpolated_quantile(pit, g);
    pt.model_quantile = ref_quantile(g);
    pt.empirical_quantile = ref_quantile(pt.empirical_pit);
    qq.points.push_back(pt);
  }
  return qq;
}

[[nodiscard]] inline std::vector<double> pit_values(std::span<const double> sigmas, std::span<const double> areas,
                                                    double kappa, double xi) {
  std::vector<double> u(areas.size());
  for (std::size_t i = 0; i < areas.size(); ++i) u[i] = egpd_cdf(areas[i], {kappa, sigmas[i], xi});
  return u;
}

// Reference distribution uses the median predicted scale.
[[nodiscard]] inline QqData qq_data(std::span<const double> sigmas, std::span<const double> areas, double kappa,
                                    double xi, std::span<const double> grid = {}) {
  if (areas.empty()) throw DataError("qq_data: no records");
  std::vector<double> sorted(sigmas.begin(), sigmas.end());
  std::sort(sorted.begin(), sorted.end());
  const EgpdParams reference{kappa, interpolated_quantile(sorted, 0.5), xi};
  return qq_from_pit(pit_values(sigmas, areas, kappa, xi), grid, reference);
}

[[nodiscard]] inline QqData qq_data(const RegressionModel& model, std::span<const SuYearRecord> positives,
                                    std::span<const double> grid = {}) {
  if (positives.empty()) throw DataError("qq_data: no records");
  std::vector<double> sigmas, areas;
  for (const auto& r : positives) {
    if (!(r.area_density > 0.0)) throw DataError("qq_data: records must have positive area density");
    areas.push_back(r.area_density);
  }
  for (const auto& o : model.predict(positives)) sigmas.push_back(o.sigma);
  return qq_data(sigmas, areas, model.kappa(), model.xi(), grid);
}

// ---------------------------------------------------------------------------
// Report

struct EvaluationReport {
  std::size_t records = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::optional<RocCurve> roc;  // absent for single-class data
  DatasetCrps crps;
  std::optional<QqData> qq;     // absent without positives
};

[[nodiscard]] inline EvaluationReport evaluate(const RegressionModel& model, std::span<const SuYearRecord> records,
                                               unsigned threads = 1, std::span<const double> qq_grid = {}) {
  EvaluationReport rep;
  rep.records = records.size();
  if (records.empty()) return rep;
  const auto outputs = model.predict(records);
  std::vector<double> scores, sigmas, areas;
  std::vector<int> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    scores.push_back(outputs[i].p);
    labels.push_back(records[i].landslide);
    if (records[i].landslide) {
      sigmas.push_back(outputs[i].sigma);
      areas.push_back(records[i].area_density);
    }
  }
  rep.positives = areas.size();
  rep.negatives = rep.records - rep.positives;
  if (rep.positives > 0 && rep.negatives > 0) rep.roc = roc_auc(scores, labels);
  rep.crps = dataset_crps(sigmas, areas, model.kappa(), model.xi(), threads);
  if (!areas.empty()) rep.qq = qq_data(sigmas, areas, model.kappa(), model.xi(), qq_grid);
  return rep;
}

[[nodiscard]] inline json report_to_json(const EvaluationReport& rep) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json roc = json::array();
  if (rep.roc)
    for (const auto& p : rep.roc->points) roc.push_back({p.false_positive_rate, p.true_positive_rate});
  json qq = json::array();
  if (rep.qq)
    for (const auto& p : rep.qq->points)
      qq.push_back({{"probability", p.probability},
                    {"empirical_pit", p.empirical_pit},
                    {"model_quantile", num(p.model_quantile)},
                    {"empirical_quantile", num(p.empirical_quantile)}});
  return json{{"auc", rep.roc ? json(rep.roc->auc) : json(nullptr)},
              {"roc", roc},
              {"crps_total", rep.crps.total},
              {"crps_mean", num(rep.crps.mean)},
              {"qq", qq},
              {"qq_ks_band", rep.qq ? json(rep.qq->ks_band) : json(nullptr)},
              {"counts", {{"records", rep.records}, {"positives", rep.positives}, {"negatives", rep.negatives}}}};
}

inline void write_roc_csv(const EvaluationReport& rep, const std::string& path) {
  csv::Writer w(path);
  w.row({"false_positive_rate", "true_positive_rate"});
  if (rep.roc)
    for (const auto& p : rep.roc->points)
      w.row({csv::format_double(p.false_positive_rate), csv::format_double(p.true_positive_rate)});
}

inline void write_qq_csv(const EvaluationReport& rep, const std::string& path) {
  csv::Writer w(path);
  w.row({"probability", "empirical_pit", "model_quantile", "empirical_quantile"});
  if (rep.qq)
    for (const auto& p : rep.qq->points)
      w.row({csv::format_double(p.probability), csv::format_double(p.empirical_pit), csv::format_double(p.model_quantile),
             csv::format_double(p.empirical_quantile)});
}

}  // namespace lshazard
