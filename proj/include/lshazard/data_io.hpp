#pragma once

// Slope-unit-year datasets: schema, CSV ingestion with invariant checks,
// standardization statistics, record-level splitting, and the synthetic
// generator used by the acceptance experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lshazard/csv.hpp"
#include "lshazard/egpd.hpp"
#include "lshazard/error.hpp"
#include "lshazard/rng.hpp"

namespace lshazard {

using json = nlohmann::json;

// Dynamic features vary by year (precipitation summaries, NDVI); static ones
// are fixed per slope unit (morphometry, soil, geology).
enum class FeatureKind { dynamic, fixed };

[[nodiscard]] inline std::string to_string(FeatureKind k) {
  return k == FeatureKind::dynamic ? "dynamic" : "static";
}

[[nodiscard]] inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "dynamic") return FeatureKind::dynamic;
  if (s == "static") return FeatureKind::fixed;
  throw DataError("unknown feature kind '" + s + "' (expected dynamic or static)");
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::fixed;
  // Declared, never inferred: "continuous", "onehot:<group>", "ordinal", ...
  std::string encoding = "continuous";

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// Names of the trigger slots replaced by return levels in hypothesised hazard.
inline constexpr const char* kPrecipMax = "precip_max";
inline constexpr const char* kPrecipMean = "precip_mean";
inline constexpr const char* kPrecipSd = "precip_sd";

[[nodiscard]] inline bool is_trigger_feature(const std::string& name) {
  return name == kPrecipMax || name == kPrecipMean || name == kPrecipSd;
}

struct FeatureSchema {
  std::vector<FeatureSpec> features;

  [[nodiscard]] std::size_t size() const noexcept { return features.size(); }

  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].name == name) return i;
    return std::nullopt;
  }

  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : features) out.push_back(f.name);
    return out;
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

inline void to_json(json& j, const FeatureSpec& f) {
  j = json{{"name", f.name}, {"kind", to_string(f.kind)}, {"encoding", f.encoding}};
}

inline void from_json(const json& j, FeatureSpec& f) {
  f.name = j.at("name").get<std::string>();
  f.kind = parse_feature_kind(j.at("kind").get<std::string>());
  f.encoding = j.value("encoding", std::string("continuous"));
}

[[nodiscard]] inline FeatureSchema schema_from_json(const json& j) {
  FeatureSchema s;
  const json& list = j.is_array() ? j : j.at("features");
  for (const auto& item : list) s.features.push_back(item.get<FeatureSpec>());
  std::set<std::string> seen;
  for (const auto& f : s.features) {
    if (f.name.empty()) throw DataError("schema: empty feature name");
    if (f.name == "su_id" || f.name == "year" || f.name == "landslide" || f.name == "area_density")
      throw DataError("schema: feature name '" + f.name + "' collides with a reserved column");
    if (!seen.insert(f.name).second) throw DataError("schema: duplicate feature '" + f.name + "'");
  }
  if (s.features.empty()) throw DataError("schema: no features declared");
  return s;
}

[[nodiscard]] inline json schema_to_json(const FeatureSchema& s) {
  return json{{"features", s.features}};
}

[[nodiscard]] inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write file '" + path + "'");
  out << j.dump(2) << '\n';
}

[[nodiscard]] inline FeatureSchema load_schema(const std::string& path) {
  return schema_from_json(read_json_file(path));
}

// One slope-unit-year.
struct SuYearRecord {
  std::string su_id;
  int year = 0;
  std::vector<double> covariates;  // schema order, raw units
  int landslide = 0;               // 0 or 1
  double area_density = 0.0;       // fraction in [0, 1); > 0 exactly when landslide == 1

  friend bool operator==(const SuYearRecord&, const SuYearRecord&) = default;
};

struct Dataset {
  FeatureSchema schema;
  std::vector<SuYearRecord> records;

  [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
};

// Per-feature affine standardization (x - mean) / sd.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;

  void apply(std::span<const double> raw, std::span<double> out) const {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mean[i]) / sd[i];
  }

  friend bool operator==(const Standardization&, const Standardization&) = default;
};

// Population mean and standard deviation of each covariate; a constant
// feature gets sd = 1 so it maps to zero.
[[nodiscard]] inline Standardization fit_standardization(std::span<const SuYearRecord> records,
                                                         std::size_t width) {
  Standardization st;
  st.mean.assign(width, 0.0);
  st.sd.assign(width, 1.0);
  if (records.empty()) return st;
  const double n = static_cast<double>(records.size());
  for (std::size_t j = 0; j < width; ++j) {
    std::vector<double> col(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) col[i] = records[i].covariates[j];
    const double m = pairwise_sum(col) / n;
    for (auto& v : col) v = (v - m) * (v - m);
    const double var = pairwise_sum(col) / n;
    st.mean[j] = m;
    st.sd[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return st;
}

struct DatasetManifest {
  FeatureSchema schema;
  std::size_t record_count = 0;
  int year_min = 0;
  int year_max = 0;
  std::size_t site_count = 0;
  std::size_t positive_count = 0;
  std::optional<Standardization> standardization;  // set from a training split
};

[[nodiscard]] inline DatasetManifest make_manifest(const Dataset& d) {
  DatasetManifest m;
  m.schema = d.schema;
  m.record_count = d.records.size();
  std::set<std::string> sites;
  for (const auto& r : d.records) {
    sites.insert(r.su_id);
    m.positive_count += r.landslide ? 1 : 0;
  }
  m.site_count = sites.size();
  if (!d.records.empty()) {
    auto [lo, hi] = std::minmax_element(d.records.begin(), d.records.end(),
                                        [](const auto& a, const auto& b) { return a.year < b.year; });
    m.year_min = lo->year;
    m.year_max = hi->year;
  }
  return m;
}

[[nodiscard]] inline json manifest_to_json(const DatasetManifest& m) {
  json j{{"schema", schema_to_json(m.schema)},
         {"record_count", m.record_count},
         {"year_range", {m.year_min, m.year_max}},
         {"site_count", m.site_count},
         {"positive_count", m.positive_count}};
  if (m.standardization) j["standardization"] = {{"mean", m.standardization->mean}, {"sd", m.standardization->sd}};
  return j;
}

// Record invariants; issues are appended with the given 1-based row number.
inline void check_record(const SuYearRecord& r, std::size_t row, std::vector<Issue>& issues) {
  if (r.landslide != 0 && r.landslide != 1)
    issues.push_back({row, "landslide must be 0 or 1"});
  if (!std::isfinite(r.area_density) || r.area_density < 0.0 || r.area_density >= 1.0)
    issues.push_back({row, "area_density must lie in [0, 1)"});
  else if ((r.landslide == 1) != (r.area_density > 0.0))
    issues.push_back({row, "occurrence-size inconsistency (landslide=" + std::to_string(r.landslide) +
                               ", area_density=" + csv::format_double(r.area_density) + ")"});
  for (std::size_t j = 0; j < r.covariates.size(); ++j)
    if (!std::isfinite(r.covariates[j]))
      issues.push_back({row, "non-finite covariate in column " + std::to_string(j + 3)});
}

[[nodiscard]] inline std::vector<std::string> dataset_header(const FeatureSchema& schema) {
  std::vector<std::string> h{"su_id", "year"};
  for (const auto& f : schema.features) h.push_back(f.name);
  h.emplace_back("landslide");
  h.emplace_back("area_density");
  return h;
}

struct LoadedDataset {
  Dataset dataset;
  DatasetManifest manifest;
};

// Parses a dataset table against a schema. Every row is checked; all
// problems are reported together in one DataError.
[[nodiscard]] inline LoadedDataset parse_dataset(const csv::Table& table, const FeatureSchema& schema,
                                                 const std::string& source) {
  const auto expected = dataset_header(schema);
  if (table.header != expected) {
    std::string got;
    for (const auto& h : table.header) got += (got.empty() ? "" : ",") + h;
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    throw DataError(source + ": schema mismatch; header is '" + got + "', expected '" + want + "'");
  }
  LoadedDataset out;
  out.dataset.schema = schema;
  std::vector<Issue> issues;
  std::map<std::pair<std::string, int>, std::size_t> seen;
  const std::size_t width = schema.size();
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::size_t rowno = i + 1;
    if (row.size() != expected.size()) {
      issues.push_back({rowno, "expected " + std::to_string(expected.size()) + " fields, found " +
                                   std::to_string(row.size())});
      continue;
    }
    SuYearRecord r;
    r.su_id = row[0];
    bool ok = true;
    if (r.su_id.empty()) {
      issues.push_back({rowno, "empty su_id"});
      ok = false;
    }
    if (auto y = csv::parse_int(row[1])) {
      r.year = static_cast<int>(*y);
    } else {
      issues.push_back({rowno, "unparsable year '" + row[1] + "'"});
      ok = false;
    }
    r.covariates.resize(width);
    for (std::size_t j = 0; j < width; ++j) {
      if (auto v = csv::parse_double(row[2 + j])) {
        r.covariates[j] = *v;
      } else {
        issues.push_back({rowno, "unparsable value '" + row[2 + j] + "' for " + schema.features[j].name});
        ok = false;
      }
    }
    if (auto l = csv::parse_int(row[2 + width])) {
      r.landslide = static_cast<int>(*l);
    } else {
      issues.push_back({rowno, "unparsable landslide '" + row[2 + width] + "'"});
      ok = false;
    }
    if (auto a = csv::parse_double(row[3 + width])) {
      r.area_density = *a;
    } else {
      issues.push_back({rowno, "unparsable area_density '" + row[3 + width] + "'"});
      ok = false;
    }
    if (!ok) continue;
    check_record(r, rowno, issues);
    auto [it, inserted] = seen.emplace(std::make_pair(r.su_id, r.year), rowno);
    if (!inserted)
      issues.push_back({rowno, "duplicate (su_id, year) = (" + r.su_id + ", " + std::to_string(r.year) +
                                   "), first seen at row " + std::to_string(it->second)});
    out.dataset.records.push_back(std::move(r));
  }
  if (!issues.empty())
    throw DataError(source + ": " + std::to_string(issues.size()) + " invalid record(s)", std::move(issues));
  out.manifest = make_manifest(out.dataset);
  return out;
}

[[nodiscard]] inline LoadedDataset load_dataset(const std::string& path, const FeatureSchema& schema) {
  return parse_dataset(csv::read_file(path), schema, path);
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  csv::Writer w(path);
  w.row(dataset_header(d.schema));
  for (const auto& r : d.records) {
    std::vector<std::string> f{r.su_id, std::to_string(r.year)};
    for (double v : r.covariates) f.push_back(csv::format_double(v));
    f.push_back(std::to_string(r.landslide));
    f.push_back(csv::format_double(r.area_density));
    w.row(f);
  }
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded uniform record-level split. Both index lists are sorted.
[[nodiscard]] inline SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw DomainError("train_fraction must lie in [0, 1]");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

[[nodiscard]] inline std::vector<SuYearRecord> select(std::span<const SuYearRecord> records,
                                                      std::span<const std::size_t> idx) {
  std::vector<SuYearRecord> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(records[i]);
  return out;
}

[[nodiscard]] inline std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction,
                                                       std::uint64_t seed) {
  if (d.records.empty()) throw DataError("split: empty dataset");
  const auto s = split_indices(d.records.size(), train_fraction, seed);
  return {Dataset{d.schema, select(d.records, s.train)}, Dataset{d.schema, select(d.records, s.test)}};
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct CovariateLaw {
  std::string name;
  FeatureKind kind = FeatureKind::dynamic;
  double mean = 0.0;
  double sd = 1.0;
  bool positive = false;  // redraw until the value is > 0

  template <class R>
  double draw(R& rng) const {
    double v = mean + sd * rng.normal();
    while (positive && !(v > 0.0)) v = mean + sd * rng.normal();
    return v;
  }
};

// Covariates are drawn as mean + sd * N(0, 1), truncated to (0, inf) when
// flagged positive; static ones once per site.
// With z the law-standardized covariate vector,
//   p_true = logistic(w . z + b),  sigma_true = exp(v . z + c),
// and positive area densities follow eGPD(kappa, sigma_true, xi) restricted
// to (0, 1) by rejection.
struct GeneratorSpec {
  std::vector<CovariateLaw> covariates;
  std::vector<double> occurrence_weights;
  double occurrence_bias = 0.0;
  std::vector<double> scale_weights;
  double scale_bias = 0.0;
  double kappa = 2.0;
  double xi = 0.3;
  int first_year = 1988;

  void validate() const {
    const auto k = covariates.size();
    if (k == 0) throw ConfigError("generator: no covariates");
    if (occurrence_weights.size() != k || scale_weights.size() != k)
      throw ConfigError("generator: weight vectors must match the covariate count");
    for (const auto& c : covariates)
      if (!(c.sd > 0.0)) throw ConfigError("generator: covariate sd must be positive");
    EgpdParams{kappa, 1.0, xi}.validate();
  }

  [[nodiscard]] std::vector<double> standardize(std::span<const double> x) const {
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - covariates[i].mean) / covariates[i].sd;
    return z;
  }

  [[nodiscard]] double p_true(std::span<const double> x) const {
    const auto z = standardize(x);
    double eta = occurrence_bias;
    for (std::size_t i = 0; i < z.size(); ++i) eta += occurrence_weights[i] * z[i];
    return 1.0 / (1.0 + std::exp(-eta));
  }

  [[nodiscard]] double sigma_true(std::span<const double> x) const {
    const auto z = standardize(x);
    double eta = scale_bias;
    for (std::size_t i = 0; i < z.size(); ++i) eta += scale_weights[i] * z[i];
    return std::exp(eta);
  }

  [[nodiscard]] FeatureSchema schema() const {
    FeatureSchema s;
    for (const auto& c : covariates) s.features.push_back({c.name, c.kind, "continuous"});
    return s;
  }

  // Documented quick-start generator: three precipitation summaries, NDVI,
  // and two static terrain covariates; kappa = 2, xi = 0.3.
  [[nodiscard]] static GeneratorSpec quickstart() {
    GeneratorSpec g;
    g.covariates = {{kPrecipMax, FeatureKind::dynamic, 100.0, 25.0, true},
                    {kPrecipMean, FeatureKind::dynamic, 5.0, 1.0, true},
                    {kPrecipSd, FeatureKind::dynamic, 12.0, 3.0, true},
                    {"ndvi_mean", FeatureKind::dynamic, 0.5, 0.1},
                    {"slope_mean", FeatureKind::fixed, 25.0, 8.0},
                    {"clay_content", FeatureKind::fixed, 30.0, 5.0}};
    g.occurrence_weights = {4.0, 2.0, 1.0, -2.0, 4.5, 0.5};
    g.occurrence_bias = -1.0;
    g.scale_weights = {0.5, 0.2, 0.0, -0.2, 0.4, 0.0};
    g.scale_bias = std::log(0.02);
    g.kappa = 2.0;
    g.xi = 0.3;
    return g;
  }
};

inline void to_json(json& j, const GeneratorSpec& g) {
  json covs = json::array();
  for (const auto& c : g.covariates)
    covs.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"mean", c.mean}, {"sd", c.sd}, {"positive", c.positive}});
  j = json{{"covariates", covs},
           {"occurrence_weights", g.occurrence_weights},
           {"occurrence_bias", g.occurrence_bias},
           {"scale_weights", g.scale_weights},
           {"scale_bias", g.scale_bias},
           {"kappa", g.kappa},
           {"xi", g.xi},
           {"first_year", g.first_year}};
}

inline void from_json(const json& j, GeneratorSpec& g) {
  g.covariates.clear();
  for (const auto& c : j.at("covariates"))
    g.covariates.push_back({c.at("name").get<std::string>(), parse_feature_kind(c.at("kind").get<std::string>()),
                            c.at("mean").get<double>(), c.at("sd").get<double>(), c.value("positive", false)});
  g.occurrence_weights = j.at("occurrence_weights").get<std::vector<double>>();
  g.occurrence_bias = j.at("occurrence_bias").get<double>();
  g.scale_weights = j.at("scale_weights").get<std::vector<double>>();
  g.scale_bias = j.at("scale_bias").get<double>();
  g.kappa = j.at("kappa").get<double>();
  g.xi = j.at("xi").get<double>();
  g.first_year = j.value("first_year", 1988);
}

struct SimulatedData {
  Dataset dataset;
  GeneratorSpec truth;
  std::vector<double> p_true;      // per record
  std::vector<double> sigma_true;  // per record
};

[[nodiscard]] inline std::string site_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "SU%05zu", i + 1);
  return buf;
}

[[nodiscard]] inline SimulatedData simulate(std::size_t n_sites, std::size_t n_years, const GeneratorSpec& truth,
                                            std::uint64_t seed) {
  truth.validate();
  SimulatedData out;
  out.truth = truth;
  out.dataset.schema = truth.schema();
  const std::size_t k = truth.covariates.size();
  Rng rng(seed);
  out.dataset.records.reserve(n_sites * n_years);
  for (std::size_t s = 0; s < n_sites; ++s) {
    std::vector<double> fixed(k, 0.0);
    for (std::size_t j = 0; j < k; ++j)
      if (truth.covariates[j].kind == FeatureKind::fixed)
        fixed[j] = truth.covariates[j].draw(rng);
    for (std::size_t y = 0; y < n_years; ++y) {
      SuYearRecord r;
      r.su_id = site_label(s);
      r.year = truth.first_year + static_cast<int>(y);
      r.covariates.resize(k);
      for (std::size_t j = 0; j < k; ++j)
        r.covariates[j] = truth.covariates[j].kind == FeatureKind::fixed
                              ? fixed[j]
                              : truth.covariates[j].draw(rng);
      const double p = truth.p_true(r.covariates);
      const double sigma = truth.sigma_true(r.covariates);
      r.landslide = rng.uniform() < p ? 1 : 0;
      if (r.landslide) {
        const EgpdParams params{truth.kappa, sigma, truth.xi};
        double a = 1.0;
        while (!(a < 1.0)) a = detail::quantile_from_log(std::log(rng.uniform()), params);
        r.area_density = a;
      }
      out.p_true.push_back(p);
      out.sigma_true.push_back(sigma);
      out.dataset.records.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction export

struct PredictionRow {
  std::string su_id;
  int year = 0;
  double p = 0.0;
  double sigma = 0.0;
  std::vector<double> hazard;  // one per requested severity level
};

inline void export_predictions(std::span<const PredictionRow> rows, std::span<const double> levels,
                               const std::string& path) {
  csv::Writer w(path);
  std::vector<std::string> header{"su_id", "year", "p", "sigma"};
  for (double q : levels) header.push_back("h_q" + csv::format_label(q));
  w.row(header);
  for (const auto& r : rows) {
    if (r.hazard.size() != levels.size()) throw DomainError("export_predictions: hazard column count mismatch");
    std::vector<std::string> f{r.su_id, std::to_string(r.year), csv::format_double(r.p), csv::format_double(r.sigma)};
    for (double h : r.hazard) f.push_back(csv::format_double(h));
    w.row(f);
  }
}

[[nodiscard]] inline std::vector<PredictionRow> read_predictions(const std::string& path) {
  const auto t = csv::read_file(path);
  if (t.header.size() < 4 || t.header[0] != "su_id" || t.header[1] != "year" || t.header[2] != "p" ||
      t.header[3] != "sigma")
    throw DataError(path + ": not a prediction table");
  std::vector<PredictionRow> out;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw DataError(path + ": ragged row");
    PredictionRow r;
    r.su_id = row[0];
    r.year = static_cast<int>(csv::parse_int(row[1]).value_or(0));
    r.p = csv::parse_double(row[2]).value_or(NAN);
    r.sigma = csv::parse_double(row[3]).value_or(NAN);
    for (std::size_t j = 4; j < row.size(); ++j) r.hazard.push_back(csv::parse_double(row[j]).value_or(NAN));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lshazard
