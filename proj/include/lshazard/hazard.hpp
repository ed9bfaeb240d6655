#pragma once

// Hazard assembly: severity thresholds from observed sizes, intensity and
// hazard per record, hypothesised hazard surfaces under return-level
// triggers, scenario differencing and display classes.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "lshazard/csv.hpp"
#include "lshazard/data_io.hpp"
#include "lshazard/egpd.hpp"
#include "lshazard/frequency.hpp"
#include "lshazard/model.hpp"
#include "lshazard/numeric.hpp"

namespace lshazard {

struct SeverityThreshold {
  double q = 0.5;
  double a_q = 0.0;
  std::size_t sample_size = 0;  // number of positive sizes the quantile came from
};

// Empirical q-quantile of positive observed area densities (linear
// interpolation at position 1 + (n - 1) q).
[[nodiscard]] inline SeverityThreshold severity_threshold(std::span<const double> positive_areas, double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("severity_threshold: q must lie in (0, 1)");
  if (positive_areas.empty()) throw DataError("severity_threshold: no positive area densities");
  std::vector<double> s(positive_areas.begin(), positive_areas.end());
  for (double a : s)
    if (!(a > 0.0 && a < 1.0)) throw DataError("severity_threshold: area densities must lie in (0, 1)");
  std::sort(s.begin(), s.end());
  return {q, interpolated_quantile(s, q), s.size()};
}

[[nodiscard]] inline std::vector<double> positive_areas(std::span<const SuYearRecord> records) {
  std::vector<double> out;
  for (const auto& r : records)
    if (r.landslide == 1 && r.area_density > 0.0) out.push_back(r.area_density);
  return out;
}

// Probability that a landslide exceeds the threshold size: 1 - F(a_q).
[[nodiscard]] inline double intensity(double sigma, double kappa, double xi, const SeverityThreshold& t) {
  return egpd_survival(t.a_q, {kappa, sigma, xi});
}

struct HazardValue {
  double p = 0.0;
  double i_q = 0.0;
  double h = 0.0;
};

[[nodiscard]] inline HazardValue hazard_from_outputs(const HeadOutputs& o, const RegressionModel& model,
                                                     const SeverityThreshold& t) {
  HazardValue v;
  v.p = o.p;
  v.i_q = intensity(o.sigma, model.kappa(), model.xi(), t);
  v.h = v.p * v.i_q;
  return v;
}

[[nodiscard]] inline HazardValue hazard_record(std::span<const double> raw_features, const RegressionModel& model,
                                               const SeverityThreshold& t) {
  if (raw_features.size() != model.schema.size())
    throw DataError("hazard_record: feature vector has " + std::to_string(raw_features.size()) +
                    " values, the model expects " + std::to_string(model.schema.size()));
  return hazard_from_outputs(predict_record(raw_features, model), model, t);
}

// ---------------------------------------------------------------------------
// Display classes

struct HazardClasses {
  std::vector<double> cuts{0.01, 0.05, 0.10, 0.25, 0.50};
  std::vector<std::string> labels{"None", "Very Low", "Low", "Moderate", "High", "Very High"};

  void validate() const {
    if (labels.size() != cuts.size() + 1) throw ConfigError("hazard classes: need one more label than cut points");
    if (!std::is_sorted(cuts.begin(), cuts.end()) ||
        std::adjacent_find(cuts.begin(), cuts.end()) != cuts.end())
      throw ConfigError("hazard classes: cut points must be strictly increasing");
  }
};

// Label of the bin [cut_{k-1}, cut_k) containing h.
[[nodiscard]] inline const std::string& hazard_class(double h, const HazardClasses& c = {}) {
  const auto k = static_cast<std::size_t>(std::upper_bound(c.cuts.begin(), c.cuts.end(), h) - c.cuts.begin());
  return c.labels.at(k);
}

// ---------------------------------------------------------------------------
// Surfaces

struct SiteHazard {
  std::string site_id;
  HazardValue value;
};

struct HazardSurface {
  double q = 0.0;
  double return_period = 0.0;
  std::string scenario = "historical";
  std::vector<SiteHazard> sites;
};

// Covariate row per site for hypothesised hazard: static features from the
// site's records (which must agree), every dynamic feature averaged over the
// site's years. Trigger slots are overwritten later by return levels.
[[nodiscard]] inline std::map<std::string, std::vector<double>> site_templates(const Dataset& data) {
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, std::size_t> counts;
  std::vector<Issue> issues;
  const auto k = data.schema.size();
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& r = data.records[i];
    auto [it, fresh] = sums.try_emplace(r.su_id, r.covariates);
    if (fresh) {
      counts[r.su_id] = 1;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (data.schema.features[j].kind == FeatureKind::fixed) {
        if (r.covariates[j] != it->second[j])
          issues.push_back({i + 1, "static feature " + data.schema.features[j].name + " varies within site " + r.su_id});
      } else {
        it->second[j] += r.covariates[j];
      }
    }
    ++counts[r.su_id];
  }
  if (!issues.empty()) throw DataError("site_templates: inconsistent static covariates", std::move(issues));
  for (auto& [site, row] : sums)
    for (std::size_t j = 0; j < k; ++j)
      if (data.schema.features[j].kind == FeatureKind::dynamic) row[j] /= static_cast<double>(counts[site]);
  return sums;
}

// Hazard per site with the trigger features replaced by the site's return
// levels for one period. Every missing site is reported before failing.
[[nodiscard]] inline HazardSurface hypothesised_hazard(const RegressionModel& model,
                                                       std::span<const ReturnLevelSet> return_levels,
                                                       const std::map<std::string, std::vector<double>>& templates,
                                                       const SeverityThreshold& threshold,
                                                       const std::string& scenario = "historical") {
  HazardSurface s;
  s.q = threshold.q;
  s.scenario = scenario;
  if (return_levels.empty()) return s;
  s.return_period = return_levels.front().return_period;
  std::vector<Issue> issues;
  for (const auto& rl : return_levels) {
    if (rl.return_period != s.return_period)
      issues.push_back({0, "site " + rl.site_id + ": return period differs within one surface"});
    const auto it = templates.find(rl.site_id);
    if (it == templates.end())
      issues.push_back({0, "site " + rl.site_id + " has return levels but no covariates"});
    else if (it->second.size() != model.schema.size())
      issues.push_back({0, "site " + rl.site_id + ": covariate row does not match the model schema"});
  }
  if (!issues.empty()) throw DataError("hypothesised_hazard: site coverage gaps", std::move(issues));

  const auto i_max = model.schema.index_of(kPrecipMax);
  const auto i_mean = model.schema.index_of(kPrecipMean);
  const auto i_sd = model.schema.index_of(kPrecipSd);
  std::vector<std::vector<double>> rows;
  for (const auto& rl : return_levels) {
    auto row = templates.at(rl.site_id);
    if (i_max) row[*i_max] = rl.rl_max;
    if (i_mean) row[*i_mean] = rl.rl_mean;
    if (i_sd) row[*i_sd] = rl.analogue_sd;
    rows.push_back(std::move(row));
  }
  const auto outputs = model.predict(model.design_matrix(std::span<const std::vector<double>>(rows)));
  for (std::size_t i = 0; i < rows.size(); ++i)
    s.sites.push_back({return_levels[i].site_id, hazard_from_outputs(outputs[i], model, threshold)});
  return s;
}

// ---------------------------------------------------------------------------
// Scenario change

enum class ChangeClass { decrease, no_change, increase, indeterminate };

[[nodiscard]] inline std::string to_string(ChangeClass c) {
  switch (c) {
    case ChangeClass::decrease: return "decrease";
    case ChangeClass::no_change: return "no_change";
    case ChangeClass::increase: return "increase";
    case ChangeClass::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

struct SiteChange {
  std::string site_id;
  double current = 0.0;
  double future = 0.0;
  double relative_change = 0.0;  // NaN when indeterminate
  ChangeClass change = ChangeClass::indeterminate;
};

struct ChangeOptions {
  double no_change_band = 0.20;
  double h_floor = 1e-6;
};

[[nodiscard]] inline SiteChange classify_change(double current, double future, const ChangeOptions& opt = {}) {
  SiteChange c;
  c.current = current;
  c.future = future;
  if (current < opt.h_floor) {
    c.relative_change = std::numeric_limits<double>::quiet_NaN();
    c.change = ChangeClass::indeterminate;
    return c;
  }
  c.relative_change = (future - current) / current;
  if (std::abs(c.relative_change) <= opt.no_change_band)
    c.change = ChangeClass::no_change;
  else
    c.change = c.relative_change > 0.0 ? ChangeClass::increase : ChangeClass::decrease;
  return c;
}

[[nodiscard]] inline std::vector<SiteChange> scenario_change(const HazardSurface& current, const HazardSurface& future,
                                                             const ChangeOptions& opt = {}) {
  if (current.q != future.q || current.return_period != future.return_period)
    throw DataError("scenario_change: surfaces differ in q or return period (q " + csv::format_label(current.q) +
                    " vs " + csv::format_label(future.q) + ", P " + csv::format_label(current.return_period) +
                    " vs " + csv::format_label(future.return_period) + ")");
  std::map<std::string, double> fut;
  for (const auto& s : future.sites) fut[s.site_id] = s.value.h;
  std::vector<Issue> issues;
  if (fut.size() != current.sites.size()) issues.push_back({0, "surfaces cover different numbers of sites"});
  std::vector<SiteChange> out;
  for (const auto& s : current.sites) {
    const auto it = fut.find(s.site_id);
    if (it == fut.end()) {
      issues.push_back({0, "site " + s.site_id + " missing from the future surface"});
      continue;
    }
    auto c = classify_change(s.value.h, it->second, opt);
    c.site_id = s.site_id;
    out.push_back(std::move(c));
  }
  if (!issues.empty()) throw DataError("scenario_change: site sets differ", std::move(issues));
  return out;
}

// ---------------------------------------------------------------------------
// Joint hazard/area table

struct HazardAreaRow {
  std::string site_id;
  double h = 0.0;
  double area = 0.0;
  int hazard_bin = 0;  // 1..bins
  int area_bin = 0;    // 1..bins
  int bivariate_class = 0;  // (hazard_bin - 1) * bins + area_bin
};

namespace detail {

// Rank-based equal-count bins (1..bins); ties broken by input order.
inline std::vector<int> rank_bins(std::span<const double> v, int bins) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<int> out(v.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    out[order[r]] = 1 + static_cast<int>(r * static_cast<std::size_t>(bins) / order.size());
  return out;
}

}  // namespace detail

[[nodiscard]] inline std::vector<HazardAreaRow> hazard_area_table(const HazardSurface& surface,
                                                                  const std::map<std::string, double>& su_areas,
                                                                  int bins = 3) {
  if (bins < 1) throw ConfigError("hazard_area_table: bins must be at least 1");
  std::vector<Issue> issues;
  std::vector<double> h, a;
  for (const auto& s : surface.sites) {
    const auto it = su_areas.find(s.site_id);
    if (it == su_areas.end())
      issues.push_back({0, "no area for site " + s.site_id});
    else if (!(it->second > 0.0))
      issues.push_back({0, "area of site " + s.site_id + " must be positive"});
    else {
      h.push_back(s.value.h);
      a.push_back(it->second);
    }
  }
  if (!issues.empty()) throw DataError("hazard_area_table: invalid areas", std::move(issues));
  const auto hb = detail::rank_bins(h, bins), ab = detail::rank_bins(a, bins);
  std::vector<HazardAreaRow> out;
  for (std::size_t i = 0; i < h.size(); ++i)
    out.push_back({surface.sites[i].site_id, h[i], a[i], hb[i], ab[i], (hb[i] - 1) * bins + ab[i]});
  return out;
}

// ---------------------------------------------------------------------------
// I/O

inline const std::vector<std::string>& surface_header() {
  static const std::vector<std::string> h{"site_id", "q", "return_period", "scenario", "p", "i_q", "h", "hazard_class"};
  return h;
}

inline std::vector<std::string> surface_fields(const HazardSurface& s, const SiteHazard& site, const HazardClasses& c) {
  return {site.site_id,
          csv::format_label(s.q),
          csv::format_label(s.return_period),
          s.scenario,
          csv::format_double(site.value.p),
          csv::format_double(site.value.i_q),
          csv::format_double(site.value.h),
          hazard_class(site.value.h, c)};
}

inline void write_surfaces_csv(std::span<const HazardSurface> surfaces, const std::string& path,
                               const HazardClasses& c = {}) {
  csv::Writer w(path);
  w.row(surface_header());
  for (const auto& s : surfaces)
    for (const auto& site : s.sites) w.row(surface_fields(s, site, c));
}

// Reads a surface file; rows are grouped by (q, return_period, scenario) in
// order of first appearance.
[[nodiscard]] inline std::vector<HazardSurface> read_surfaces_csv(const std::string& path) {
  const auto t = csv::read_file(path);
  std::vector<std::size_t> col;
  for (const auto& name : surface_header()) col.push_back(t.require_column(name, path));
  std::vector<HazardSurface> out;
  std::vector<Issue> issues;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    try {
      if (row.size() != t.header.size()) throw std::invalid_argument("wrong number of fields");
      const double q = csv::field_double(row, col[1], "q");
      const double P = csv::field_double(row, col[2], "return_period");
      const std::string& scen = row[col[3]];
      HazardValue v{csv::field_double(row, col[4], "p"), csv::field_double(row, col[5], "i_q"),
                    csv::field_double(row, col[6], "h")};
      auto it = std::find_if(out.begin(), out.end(), [&](const HazardSurface& s) {
        return s.q == q && s.return_period == P && s.scenario == scen;
      });
      if (it == out.end()) {
        out.push_back({q, P, scen, {}});
        it = out.end() - 1;
      }
      it->sites.push_back({row[col[0]], v});
    } catch (const std::exception& e) {
      issues.push_back({i + 1, e.what()});
    }
  }
  if (!issues.empty()) throw DataError(path + ": invalid rows", std::move(issues));
  return out;
}

inline void write_change_csv(const HazardSurface& future, std::span<const SiteChange> changes, const std::string& path,
                             const HazardClasses& c = {}) {
  std::map<std::string, const SiteHazard*> by_site;
  for (const auto& s : future.sites) by_site[s.site_id] = &s;
  csv::Writer w(path);
  auto header = surface_header();
  header.insert(header.end(), {"h_current", "rel_change", "change_class"});
  w.row(header);
  for (const auto& ch : changes) {
    auto f = surface_fields(future, *by_site.at(ch.site_id), c);
    f.push_back(csv::format_double(ch.current));
    f.push_back(std::isnan(ch.relative_change) ? "NA" : csv::format_double(ch.relative_change));
    f.push_back(to_string(ch.change));
    w.row(f);
  }
}

inline void write_hazard_area_csv(std::span<const HazardAreaRow> rows, const std::string& path) {
  csv::Writer w(path);
  w.row({"site_id", "h", "area", "hazard_bin", "area_bin", "bivariate_class"});
  for (const auto& r : rows)
    w.row({r.site_id, csv::format_double(r.h), csv::format_double(r.area), std::to_string(r.hazard_bin),
           std::to_string(r.area_bin), std::to_string(r.bivariate_class)});
}

// GeoJSON passthrough: features of `sites` (a FeatureCollection whose
// features carry properties.site_id) that appear in the surface, with the
// hazard fields merged into their properties.
[[nodiscard]] inline json surface_to_geojson(const HazardSurface& s, const json& sites, const HazardClasses& c = {}) {
  if (!sites.is_object() || sites.value("type", "") != "FeatureCollection" || !sites.contains("features"))
    throw DataError("site geometry: expected a GeoJSON FeatureCollection");
  std::map<std::string, const SiteHazard*> by_site;
  for (const auto& v : s.sites) by_site[v.site_id] = &v;
  json out = {{"type", "FeatureCollection"}, {"features", json::array()}};
  for (const auto& f : sites.at("features")) {
    const auto& props = f.value("properties", json::object());
    if (!props.contains("site_id")) continue;
    const auto it = by_site.find(props.at("site_id").get<std::string>());
    if (it == by_site.end()) continue;
    json g = f;
    g["properties"]["q"] = s.q;
    g["properties"]["return_period"] = s.return_period;
    g["properties"]["scenario"] = s.scenario;
    g["properties"]["p"] = it->second->value.p;
    g["properties"]["i_q"] = it->second->value.i_q;
    g["properties"]["h"] = it->second->value.h;
    g["properties"]["hazard_class"] = hazard_class(it->second->value.h, c);
    out["features"].push_back(std::move(g));
  }
  return out;
}

}  // namespace lshazard
