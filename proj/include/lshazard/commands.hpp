#pragma once

// Subcommands behind the command-line tool. Each takes a JSON run
// configuration plus the shared flags, writes its outputs and a
// resolved_config.json into the output directory, and reports failures by
// throwing lshazard::Error subclasses.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lshazard/data_io.hpp"
#include "lshazard/evaluation.hpp"
#include "lshazard/frequency.hpp"
#include "lshazard/hazard.hpp"
#include "lshazard/model.hpp"
#include "lshazard/training.hpp"

namespace lshazard::commands {

namespace fs = std::filesystem;

struct RunOptions {
  json config = json::object();
  fs::path config_dir = ".";  // relative paths in the config resolve against this
  std::optional<std::uint64_t> seed;
  fs::path out_dir = ".";
  int threads = 0;  // 0: HAZ_THREADS or 1
};

// Read access to the configuration that records every value used, defaults
// included, for resolved_config.json.
class Config {
 public:
  explicit Config(const RunOptions& opt) : raw_(opt.config), dir_(opt.config_dir) {
    if (!raw_.is_object()) throw ConfigError("configuration must be a JSON object");
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    T v = fallback;
    if (raw_.contains(key)) v = convert<T>(key);
    resolved_[key] = v;
    return v;
  }

  template <class T>
  T require(const std::string& key) {
    if (!raw_.contains(key)) throw ConfigError("configuration is missing '" + key + "'");
    T v = convert<T>(key);
    resolved_[key] = v;
    return v;
  }

  [[nodiscard]] bool has(const std::string& key) const { return raw_.contains(key); }

  std::string path(const std::string& key) {
    const auto p = require<std::string>(key);
    return resolve(p);
  }

  std::optional<std::string> optional_path(const std::string& key) {
    if (!raw_.contains(key) || raw_.at(key).is_null()) return std::nullopt;
    return path(key);
  }

  json& resolved() { return resolved_; }

 private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return raw_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("configuration value '" + key + "' has the wrong type");
    }
  }

  std::string resolve(const std::string& p) const {
    const fs::path q(p);
    return (q.is_absolute() ? q : dir_ / q).lexically_normal().string();
  }

  const json& raw_;
  fs::path dir_;
  json resolved_ = json::object();
};

inline void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir.string() + "'");
}

inline std::string out(const RunOptions& o, const std::string& name) { return (o.out_dir / name).string(); }

inline void write_resolved(const RunOptions& o, Config& c, const std::string& command, std::uint64_t seed) {
  json r = c.resolved();
  r["command"] = command;
  r["seed"] = seed;
  write_json_file(out(o, "resolved_config.json"), r);
}

inline std::uint64_t resolve_seed(const RunOptions& o, Config& c) {
  const auto from_config = c.get<std::uint64_t>("seed", 0);
  return o.seed.value_or(from_config);
}

// ---------------------------------------------------------------------------
// Training configuration shared by fit and tune-gamma.

inline TrainConfig train_config(Config& c, std::uint64_t seed, int threads) {
  TrainConfig t;
  t.seed = seed;
  t.threads = threads;
  t.epochs = c.get<std::size_t>("epochs", 100);
  t.loss.gamma = c.get<double>("gamma", 0.5);
  t.loss.batch_size = c.get<std::size_t>("batch_size", 2048);
  const auto w = c.get<std::vector<double>>("class_weights", {0.9, 0.1});
  if (w.size() != 2) throw ConfigError("class_weights must hold two values (positive, negative)");
  t.loss.class_weight_positive = w[0];
  t.loss.class_weight_negative = w[1];
  t.optimizer.learning_rate = c.get<double>("learning_rate", 1e-3);
  t.optimizer.decay_factor = c.get<double>("decay_factor", 0.95);
  t.optimizer.decay_every = c.get<std::uint64_t>("decay_every", 50'000);
  t.architecture.blocks = c.get<std::size_t>("blocks", 16);
  t.architecture.width = c.get<std::size_t>("width", 64);
  t.architecture.dropout_rate = c.get<double>("dropout_rate", 0.2);
  t.architecture.bn_momentum = c.get<double>("bn_momentum", 0.99);
  t.train_fraction = c.get<double>("train_fraction", 0.7);
  t.validation_fraction = c.get<double>("validation_fraction", 0.3);
  t.warm_start = c.get<bool>("warm_start", true);
  if (t.architecture.blocks == 0 || t.architecture.width == 0) throw ConfigError("blocks and width must be positive");
  if (!(t.architecture.dropout_rate >= 0.0 && t.architecture.dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0, 1)");
  t.validate();
  return t;
}

inline Dataset load_training_data(Config& c) {
  const auto schema = load_schema(c.path("schema"));
  return load_dataset(c.path("dataset"), schema).dataset;
}

inline void write_evaluation(const RunOptions& o, const EvaluationReport& rep, const std::string& prefix) {
  write_json_file(out(o, prefix + "report.json"), report_to_json(rep));
  if (rep.roc) write_roc_csv(rep, out(o, prefix + "roc.csv"));
  if (rep.qq) write_qq_csv(rep, out(o, prefix + "qq.csv"));
}

// split -> train -> evaluate on the test split.
inline void cmd_fit(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto data = load_training_data(c);
  const auto cfg = train_config(c, seed, o.threads);
  const auto qq_grid = c.get<std::vector<double>>("qq_grid", {});
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "fit", seed);

  const auto result = train(data, cfg);
  save_model(result.model, out(o, "model.json"));
  write_trace_csv(result.trace, out(o, "loss_trace.csv"));
  auto manifest = make_manifest(data);
  manifest.standardization = result.model.standardization;
  auto mj = manifest_to_json(manifest);
  mj["split"] = {{"train", result.split.train.size()}, {"test", result.split.test.size()}};
  mj["best_epoch"] = result.best_epoch;
  write_json_file(out(o, "manifest.json"), mj);

  auto test = select(data.records, result.split.test);
  if (test.empty()) test = select(data.records, result.split.train);
  write_evaluation(o, evaluate(result.model, test, resolve_threads(o.threads), qq_grid), "");
}

// Scores a saved model on a dataset: all records, or the test part of the
// split a fit with the same seed and train_fraction would make.
inline void cmd_evaluate(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto model = load_model(c.path("model"));
  const auto data = load_dataset(c.path("dataset"), model.schema).dataset;
  const auto which = c.get<std::string>("records", "test");
  const auto train_fraction = c.get<double>("train_fraction", 0.7);
  const auto qq_grid = c.get<std::vector<double>>("qq_grid", {});
  if (which != "test" && which != "all") throw ConfigError("records must be 'test' or 'all'");
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "evaluate", seed);
  std::vector<SuYearRecord> records = data.records;
  if (which == "test")
    records = select(data.records, split_indices(data.records.size(), train_fraction,
                                                 derive_seed(seed, {kSplitStream}))
                                       .test);
  if (records.empty()) throw DataError("evaluate: no records selected");
  write_evaluation(o, evaluate(model, records, resolve_threads(o.threads), qq_grid), "");
}

inline void cmd_tune_gamma(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto data = load_training_data(c);
  const auto cfg = train_config(c, seed, o.threads);
  const auto grid = c.get<std::vector<double>>("gamma_grid", default_gamma_grid());
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "tune-gamma", seed);
  const auto t = tune_gamma(data, cfg, grid);
  csv::Writer w(out(o, "gamma_report.csv"));
  w.row({"gamma", "status", "auc", "crps_mean", "loss", "error"});
  json rows = json::array();
  for (const auto& r : t.results) {
    w.row({csv::format_label(r.gamma), r.ok ? "ok" : "failed", csv::format_double(r.auc),
           csv::format_double(r.crps_mean), csv::format_double(r.loss), r.error});
    rows.push_back({{"gamma", r.gamma}, {"ok", r.ok}, {"auc", r.ok ? json(r.auc) : json()},
                    {"crps_mean", r.ok ? json(r.crps_mean) : json()}, {"error", r.error}});
  }
  write_json_file(out(o, "gamma_report.json"),
                  {{"best_gamma", std::isnan(t.best_gamma) ? json() : json(t.best_gamma)}, {"results", rows}});
  if (std::isnan(t.best_gamma)) throw NumericalError("tune-gamma: every grid point failed");
}

// Synthetic dataset, its schema, the generating truth and the yearly
// precipitation table for return-level fitting.
inline void cmd_simulate(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto n_sites = c.get<std::size_t>("n_sites", 200);
  const auto n_years = c.get<std::size_t>("n_years", 100);
  GeneratorSpec spec = GeneratorSpec::quickstart();
  if (c.has("generator")) {
    try {
      spec = c.require<json>("generator").get<GeneratorSpec>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("generator: ") + e.what());
    } catch (const DataError& e) {
      throw ConfigError(std::string("generator: ") + e.what());
    }
  } else {
    c.resolved()["generator"] = spec;
  }
  spec.validate();
  if (n_sites == 0 || n_years == 0) throw ConfigError("n_sites and n_years must be positive");
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "simulate", seed);

  const auto sim = simulate(n_sites, n_years, spec, seed);
  write_dataset(sim.dataset, out(o, "dataset.csv"));
  write_json_file(out(o, "schema.json"), schema_to_json(sim.dataset.schema));
  write_json_file(out(o, "truth.json"), json(spec));
  const auto& schema = sim.dataset.schema;
  const auto i_max = schema.index_of(kPrecipMax), i_mean = schema.index_of(kPrecipMean),
             i_sd = schema.index_of(kPrecipSd);
  if (i_max && i_mean && i_sd) {
    std::vector<PrecipitationRecord> precip;
    for (const auto& r : sim.dataset.records)
      precip.push_back({r.su_id, r.year, r.covariates[*i_mean], r.covariates[*i_max], r.covariates[*i_sd]});
    write_precipitation(precip, out(o, "precipitation.csv"));
  }
}

// Fits annual-max and annual-mean models; a site that cannot be fitted is
// listed in failures.json and left out while the others are still emitted.
inline void cmd_return_levels(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto precip = load_precipitation(c.path("precipitation"));
  const auto periods = c.get<std::vector<double>>("return_periods", {5, 10, 15, 20});
  const auto min_years = c.get<std::size_t>("min_years", 5);
  if (periods.empty()) throw ConfigError("return_periods must not be empty");
  for (double P : periods)
    if (!(P > 1.0)) throw ConfigError("return periods must exceed 1 year");
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "return-levels", seed);

  FrequencyFitOptions fo;
  fo.min_years = min_years;
  auto max_series = series_by_site(precip, FrequencyVariable::annual_max);
  auto mean_series = series_by_site(precip, FrequencyVariable::annual_mean);
  json failures = json::array();
  for (auto it = max_series.begin(); it != max_series.end();) {
    std::string reason;
    for (const auto* s : {&it->second, &mean_series.at(it->first)}) {
      if (s->size() < min_years) reason = "fewer than " + std::to_string(min_years) + " yearly values";
      else if (std::all_of(s->begin(), s->end(), [&](double v) { return v == s->front(); }))
        reason = "constant series";
    }
    if (reason.empty()) {
      ++it;
      continue;
    }
    failures.push_back({{"site_id", it->first}, {"reason", reason}});
    mean_series.erase(it->first);
    it = max_series.erase(it);
  }
  write_json_file(out(o, "failures.json"), failures);
  if (max_series.empty()) throw DataError("return-levels: no site could be fitted");

  const auto max_fit = fit_frequency(max_series, FrequencyVariable::annual_max, fo);
  const auto mean_fit = fit_frequency(mean_series, FrequencyVariable::annual_mean, fo);
  write_json_file(out(o, "frequency_models.json"),
                  {{"annual_max", frequency_to_json(max_fit.model)}, {"annual_mean", frequency_to_json(mean_fit.model)}});
  std::vector<PrecipitationRecord> kept;
  for (const auto& r : precip)
    if (max_series.count(r.site_id)) kept.push_back(r);
  const auto sets = build_return_level_sets(max_fit.model, mean_fit.model, area_aggregate(kept), periods);
  write_return_levels_csv(sets, out(o, "return_levels.csv"));
}

inline std::map<std::string, double> load_su_areas(const std::string& path) {
  const auto t = csv::read_file(path);
  const auto c_site = t.require_column("site_id", path), c_area = t.require_column("area", path);
  std::map<std::string, double> out;
  std::vector<Issue> issues;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    try {
      out[t.rows[i].at(c_site)] = csv::field_double(t.rows[i], c_area, "area");
    } catch (const std::exception& e) {
      issues.push_back({i + 1, e.what()});
    }
  }
  if (!issues.empty()) throw DataError(path + ": invalid rows", std::move(issues));
  return out;
}

inline HazardClasses hazard_classes(Config& c) {
  HazardClasses h;
  h.cuts = c.get<std::vector<double>>("hazard_class_cuts", h.cuts);
  h.labels = c.get<std::vector<std::string>>("hazard_class_labels", h.labels);
  h.validate();
  return h;
}

// One surface per (q, P): files hazard_q<q>_P<P>.csv plus the combined
// hazard_surfaces.csv.
inline void cmd_hazard(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto model = load_model(c.path("model"));
  const auto data = load_dataset(c.path("dataset"), model.schema).dataset;
  const auto rls = read_return_levels_csv(c.path("return_levels"));
  const auto levels = c.get<std::vector<double>>("severity_levels", {0.05, 0.5, 0.95});
  const auto periods = c.get<std::vector<double>>("return_periods", {5, 10, 15, 20});
  const auto scenario = c.get<std::string>("scenario", "historical");
  const auto classes = hazard_classes(c);
  const auto geo_path = c.optional_path("sites_geojson");
  const auto areas_path = c.optional_path("su_areas");
  if (levels.empty()) throw ConfigError("severity_levels must not be empty");
  if (periods.empty()) throw ConfigError("return_periods must not be empty");
  for (double q : levels)
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("severity levels must lie in (0, 1)");
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "hazard", seed);

  const auto pos = positive_areas(data.records);
  std::vector<SeverityThreshold> thresholds;
  json tj = json::array();
  for (double q : levels) {
    thresholds.push_back(severity_threshold(pos, q));
    tj.push_back({{"q", q}, {"a_q", thresholds.back().a_q}, {"sample_size", thresholds.back().sample_size}});
  }
  write_json_file(out(o, "thresholds.json"), tj);

  const auto templates = site_templates(data);
  const json geo = geo_path ? read_json_file(*geo_path) : json();
  const auto areas = areas_path ? load_su_areas(*areas_path) : std::map<std::string, double>{};
  std::vector<HazardSurface> all;
  for (double P : periods) {
    std::vector<ReturnLevelSet> sel;
    for (const auto& r : rls)
      if (r.return_period == P) sel.push_back(r);
    if (sel.empty())
      throw DataError("hazard: return-level table has no rows for P = " + csv::format_label(P));
    for (const auto& t : thresholds) {
      auto s = hypothesised_hazard(model, sel, templates, t, scenario);
      s.return_period = P;
      const std::string stem = "hazard_q" + csv::format_label(t.q) + "_P" + csv::format_label(P);
      write_surfaces_csv(std::vector<HazardSurface>{s}, out(o, stem + ".csv"), classes);
      if (geo_path) write_json_file(out(o, stem + ".geojson"), surface_to_geojson(s, geo, classes));
      if (areas_path) write_hazard_area_csv(hazard_area_table(s, areas), out(o, stem + "_area.csv"));
      all.push_back(std::move(s));
    }
  }
  write_surfaces_csv(all, out(o, "hazard_surfaces.csv"), classes);
}

// Change between two surface files, matched by (q, P).
inline void cmd_scenario_diff(const RunOptions& o) {
  Config c(o);
  const auto seed = resolve_seed(o, c);
  const auto current = read_surfaces_csv(c.path("current"));
  const auto future = read_surfaces_csv(c.path("future"));
  ChangeOptions co;
  co.no_change_band = c.get<double>("no_change_band", 0.20);
  co.h_floor = c.get<double>("h_floor", 1e-6);
  const auto classes = hazard_classes(c);
  if (!(co.no_change_band >= 0.0) || !(co.h_floor > 0.0)) throw ConfigError("invalid no_change_band or h_floor");
  prepare_out_dir(o.out_dir);
  write_resolved(o, c, "scenario-diff", seed);

  if (current.size() != future.size())
    throw DataError("scenario-diff: files hold " + std::to_string(current.size()) + " and " +
                    std::to_string(future.size()) + " surfaces");
  csv::Writer w(out(o, "scenario_change.csv"));
  auto header = surface_header();
  header.insert(header.end(), {"h_current", "rel_change", "change_class"});
  w.row(header);
  for (const auto& cur : current) {
    const auto it = std::find_if(future.begin(), future.end(), [&](const HazardSurface& f) {
      return f.q == cur.q && f.return_period == cur.return_period;
    });
    if (it == future.end())
      throw DataError("scenario-diff: no future surface with q = " + csv::format_label(cur.q) +
                      " and P = " + csv::format_label(cur.return_period));
    const auto changes = scenario_change(cur, *it, co);
    std::map<std::string, const SiteHazard*> by_site;
    for (const auto& s : it->sites) by_site[s.site_id] = &s;
    for (const auto& ch : changes) {
      auto f = surface_fields(*it, *by_site.at(ch.site_id), classes);
      f.push_back(csv::format_double(ch.current));
      f.push_back(std::isnan(ch.relative_change) ? "NA" : csv::format_double(ch.relative_change));
      f.push_back(to_string(ch.change));
      w.row(f);
    }
  }
}

}  // namespace lshazard::commands
