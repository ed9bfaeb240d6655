// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failing criteria that are not listed in kKnownShortfalls.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "support/gradient_check.hpp"
#include "lshazard/commands.hpp"
#include "lshazard/evaluation.hpp"
#include "lshazard/frequency.hpp"
#include "lshazard/hazard.hpp"
#include "lshazard/training.hpp"

namespace {

using namespace lshazard;
namespace fs = std::filesystem;

// Criteria whose failure is expected and explained in the README.
const std::set<int> kKnownShortfalls = {6};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

fs::path work_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "lshazard_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

commands::RunOptions run_options(const fs::path& dir, const std::string& config, const std::string& out) {
  commands::RunOptions o;
  o.config = json::parse(config);
  o.config_dir = dir;
  o.out_dir = dir / out;
  o.threads = 1;
  return o;
}

// ---------------------------------------------------------------------------

Outcome egpd_identities() {
  const std::vector<EgpdParams> cases{{0.5, 1.0, 0.1}, {1.0, 0.3, 0.25}, {2.0, 0.02, 0.3}, {4.0, 5.0, 0.2},
                                      {0.8, 2.0, 0.6}};
  double worst_round = 0.0;
  for (const auto& p : cases)
    for (int k = 0; k <= 200; ++k) {
      const double u = 1e-6 + (1.0 - 2e-6) * k / 200.0;
      worst_round = std::max(worst_round, std::abs(egpd_cdf(egpd_quantile(u, p), p) - u) / u);
    }
  double worst_gpd = 0.0;
  for (double xi : {0.05, 0.2, 0.5})
    for (double x : {1e-6, 0.01, 0.5, 2.0, 30.0}) {
      const double sigma = 1.7;
      const double gpd = -std::expm1(-std::log1p(xi * x / sigma) / xi);
      worst_gpd = std::max(worst_gpd, std::abs(egpd_cdf(x, {1.0, sigma, xi}) - gpd) / gpd);
    }
  double worst_norm = 0.0;
  for (const auto& p : cases) {
    auto f = [&](double x) { return x > 0.0 ? egpd_pdf(x, p) : 0.0; };
    const double mid = egpd_quantile(0.5, p);
    const double total = boost::math::quadrature::tanh_sinh<double>().integrate(f, 0.0, mid) +
                         boost::math::quadrature::exp_sinh<double>().integrate(f, mid, INFINITY);
    worst_norm = std::max(worst_norm, std::abs(total - 1.0));
  }
  return {worst_round <= 1e-10 && worst_gpd <= 8 * 2.220446049250313e-16 && worst_norm <= 1e-6,
          fmt("round trip rel %.2e, GPD reduction rel %.2e, pdf mass error %.2e", worst_round, worst_gpd, worst_norm)};
}

Outcome gradient_correctness() {
  const auto r = testing::check_gradients(2024, 20, 2, 4);
  return {r.worst_excess <= 0.0 && r.batches == 20,
          fmt("%zu parameters x %zu batches, tolerance 1e-4 relative + 1e-8; closest: %s", r.parameters, r.batches,
              r.worst_path.c_str())};
}

Outcome loss_decomposition() {
  Rng rng(31);
  double worst_bce = 0.0, worst_nll = 0.0;
  for (int b = 0; b < 20; ++b) {
    const double kappa = 0.5 + 3.0 * rng.uniform(), xi = 0.05 + 0.5 * rng.uniform();
    std::vector<int> l;
    std::vector<double> a;
    std::vector<HeadOutputs> out;
    double bce = 0.0, nll = 0.0;
    for (int i = 0; i < 64; ++i) {
      const int y = rng.uniform() < 0.4 ? 1 : 0;
      const double p = 0.02 + 0.96 * rng.uniform(), sigma = 0.1 + 2.0 * rng.uniform();
      const double area = y ? egpd_quantile(0.01 + 0.98 * rng.uniform(), {kappa, sigma, xi}) : 0.0;
      l.push_back(y);
      a.push_back(area);
      out.push_back({p, sigma});
      bce -= y ? 0.9 * std::log(p) : 0.1 * std::log1p(-p);
      if (y) nll -= egpd_logpdf(area, {kappa, sigma, xi});
    }
    worst_bce = std::max(worst_bce, std::abs(joint_loss_terms(l, a, out, kappa, xi, 1.0).total - bce));
    worst_nll = std::max(worst_nll, std::abs(joint_loss_terms(l, a, out, kappa, xi, 1e-12).total - nll));
  }
  return {worst_bce <= 1e-9 && worst_nll <= 1e-9,
          fmt("gamma=1 vs weighted BCE %.2e, gamma=1e-12 vs eGPD NLL %.2e (20 batches)", worst_bce, worst_nll)};
}

// Recovery run settings; the trained model is reused by the Q-Q criterion.
struct Recovery {
  GeneratorSpec truth = GeneratorSpec::quickstart();
  SimulatedData sim;
  TrainResult result;
};

constexpr std::uint64_t kRecoveryDataSeed = 2026;
constexpr std::uint64_t kRecoveryTrainSeed = 7;

Outcome synthetic_recovery(Recovery& rec) {
  rec.sim = simulate(400, 50, rec.truth, kRecoveryDataSeed);
  TrainConfig c;
  c.architecture = {4, 32, 0.3, 0.99};
  c.epochs = 100;
  c.loss.batch_size = 256;
  c.seed = kRecoveryTrainSeed;
  c.threads = 1;
  rec.result = train(rec.sim.dataset, c);
  const auto& model = rec.result.model;
  const auto& records = rec.sim.dataset.records;
  std::vector<double> p_hat, sigma_hat, sigma_true, areas;
  std::vector<int> labels;
  for (auto i : rec.result.split.test) {
    const auto h = predict_record(records[i].covariates, model);
    p_hat.push_back(h.p);
    labels.push_back(records[i].landslide);
    if (records[i].landslide) {
      sigma_hat.push_back(h.sigma);
      sigma_true.push_back(rec.sim.sigma_true[i]);
      areas.push_back(records[i].area_density);
    }
  }
  const double a = auc(p_hat, labels);
  const double crps_fit = dataset_crps(sigma_hat, areas, model.kappa(), model.xi(), 1).mean;
  const double crps_true = dataset_crps(sigma_true, areas, rec.truth.kappa, rec.truth.xi, 1).mean;
  const double dk = model.kappa() / rec.truth.kappa - 1.0, dx = model.xi() / rec.truth.xi - 1.0;
  return {a >= 0.95 && std::abs(dk) <= 0.15 && std::abs(dx) <= 0.15 && crps_fit <= 1.05 * crps_true,
          fmt("%zu records, %zu epochs: AUC %.4f, kappa %.3f (%+.1f%%), xi %.3f (%+.1f%%), CRPS ratio %.4f",
              records.size(), c.epochs, a, model.kappa(), 100 * dk, model.xi(), 100 * dx, crps_fit / crps_true)};
}

Outcome return_level_closed_form() {
  double worst = 0.0;
  bool increasing = true;
  for (double xi : {0.05, 0.2, 0.45})
    for (double sigma : {0.5, 10.0, 80.0}) {
      TriggerFrequencyModel m;
      m.kappa = 1.0;
      m.xi = xi;
      m.sigma["S"] = sigma;
      double prev = -INFINITY;
      for (double P : {5.0, 10.0, 15.0, 20.0}) {
        const double rl = return_level(m, "S", P);
        const double gpd = sigma / xi * (std::pow(P, xi) - 1.0);
        worst = std::max(worst, std::abs(rl - gpd) / gpd);
        increasing = increasing && rl > prev;
        prev = rl;
      }
    }
  return {worst <= 1e-10 && increasing, fmt("worst relative gap %.2e, strictly increasing over P: %s", worst,
                                            increasing ? "yes" : "no")};
}

std::map<std::string, std::vector<double>> two_site_series(std::uint64_t seed) {
  return {{"A", egpd_sample(200, {4.0, 5.0, 0.2}, derive_seed(seed, {1}))},
          {"B", egpd_sample(200, {4.0, 10.0, 0.2}, derive_seed(seed, {2}))}};
}

bool frequency_within(const TriggerFrequencyModel& m) {
  return std::abs(m.kappa / 4.0 - 1.0) <= 0.15 && std::abs(m.xi / 0.2 - 1.0) <= 0.15 &&
         std::abs(m.sigma.at("A") / 5.0 - 1.0) <= 0.10 && std::abs(m.sigma.at("B") / 10.0 - 1.0) <= 0.10;
}

Outcome frequency_recovery() {
  const auto fit = fit_frequency(two_site_series(1));
  const auto& m = fit.model;
  return {frequency_within(m), fmt("kappa %.3f (truth 4), xi %.3f (0.2), sigma %.3f (5) / %.3f (10)", m.kappa, m.xi,
                                   m.sigma.at("A"), m.sigma.at("B"))};
}

// How often an independent 200-year dataset meets the recovery tolerances.
std::string frequency_replicate_rate() {
  constexpr int kReplicates = 40;
  int within = 0;
  for (int s = 100; s < 100 + kReplicates; ++s) within += frequency_within(fit_frequency(two_site_series(s)).model);
  return fmt("frequency recovery replicates within tolerance: %d/%d", within, kReplicates);
}

// Energy form E|X - a| - E|X - X'| / 2 from a sorted sample.
double energy_crps(std::vector<double> x, double a) {
  std::sort(x.begin(), x.end());
  const long double n = static_cast<long double>(x.size());
  long double abs_dev = 0.0L, pair = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) {
    abs_dev += std::abs(x[i] - a);
    pair += (2.0L * static_cast<long double>(i) + 1.0L - n) * x[i];
  }
  return static_cast<double>(abs_dev / n - pair / (n * n));
}

Outcome crps_oracle() {
  Rng rng(99);
  double worst = 0.0;
  for (int k = 0; k < 25; ++k) {
    const EgpdParams p{0.5 + 3.5 * rng.uniform(), std::exp(std::log(0.01) + std::log(1000.0) * rng.uniform()),
                       0.05 + 0.35 * rng.uniform()};
    const double a = egpd_quantile(0.02 + 0.96 * rng.uniform(), p);
    const double c = crps_egpd(p, a).value;
    const double mc = energy_crps(egpd_sample(1'000'000, p, derive_seed(99, {static_cast<std::uint64_t>(k)})), a);
    worst = std::max(worst, std::abs(c - mc) / mc);
  }
  return {worst <= 0.01, fmt("25 cases, worst relative gap to 1e6-sample oracle %.4f", worst)};
}

Outcome auc_hand_cases() {
  const double four = auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  const double separated = auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1});
  const double ties = auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1});
  return {four == 0.75 && separated == 1.0 && ties == 0.5,
          fmt("four-point %.17g, separated %.17g, all ties %.17g", four, separated, ties)};
}

// Simulated inputs plus a small trained model, shared by the CLI criteria.
fs::path pipeline_inputs() {
  const auto dir = work_dir("pipeline");
  commands::cmd_simulate(run_options(dir, R"({"seed": 3, "n_sites": 30, "n_years": 25})", "sim"));
  commands::cmd_fit(run_options(dir, R"({"dataset": "sim/dataset.csv", "schema": "sim/schema.json", "seed": 4,
                                         "epochs": 4, "blocks": 2, "width": 8, "batch_size": 128})",
                                "fit"));
  commands::cmd_return_levels(run_options(dir, R"({"precipitation": "sim/precipitation.csv"})", "rl"));
  return dir;
}

Outcome hazard_grid(const fs::path& dir) {
  commands::cmd_hazard(run_options(dir, R"({"model": "fit/model.json", "dataset": "sim/dataset.csv",
                                            "return_levels": "rl/return_levels.csv",
                                            "severity_levels": [0.05, 0.5, 0.95],
                                            "return_periods": [5, 10, 15, 20]})",
                                   "hazard"));
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "hazard"))
    if (e.path().filename().string().rfind("hazard_q", 0) == 0 && e.path().extension() == ".csv") ++files;
  const auto surfaces = read_surfaces_csv((dir / "hazard" / "hazard_surfaces.csv").string());
  bool product = true, range = true, monotone = true;
  std::map<std::pair<std::string, double>, std::vector<std::pair<double, double>>> by_site_p;
  for (const auto& s : surfaces)
    for (const auto& site : s.sites) {
      const auto& v = site.value;
      product = product && std::abs(v.h - v.p * v.i_q) <= 1e-15;
      range = range && v.h >= 0.0 && v.h <= 1.0;
      by_site_p[{site.site_id, s.return_period}].emplace_back(s.q, v.h);
    }
  for (auto& [key, hs] : by_site_p) {
    std::sort(hs.begin(), hs.end());
    for (std::size_t i = 1; i < hs.size(); ++i) monotone = monotone && hs[i].second <= hs[i - 1].second;
  }
  return {files == 12 && surfaces.size() == 12 && product && range && monotone,
          fmt("%d surface files, %zu surfaces; h = p*i_q: %s, h in [0,1]: %s, nonincreasing in q: %s", files,
              surfaces.size(), product ? "yes" : "no", range ? "yes" : "no", monotone ? "yes" : "no")};
}

Outcome scenario_band() {
  const auto dir = work_dir("scenario");
  const std::string header = "site_id,q,return_period,scenario,p,i_q,h,hazard_class\n";
  put(dir / "current.csv", header + "UP10,0.5,10,current,0.5,0.2,0.1,Low\n"
                                    "UP150,0.5,10,current,0.5,0.2,0.1,Low\n"
                                    "DOWN30,0.5,10,current,0.5,0.2,0.1,Low\n");
  put(dir / "future.csv", header + "UP10,0.5,10,future,0.5,0.22,0.11,Moderate\n"
                                   "UP150,0.5,10,future,0.5,0.5,0.25,Very High\n"
                                   "DOWN30,0.5,10,future,0.5,0.14,0.07,Low\n");
  commands::cmd_scenario_diff(run_options(dir, R"({"current": "current.csv", "future": "future.csv"})", "diff"));
  const auto t = csv::read_file((dir / "diff" / "scenario_change.csv").string());
  const auto c_site = t.require_column("site_id", "diff"), c_class = t.require_column("change_class", "diff");
  std::map<std::string, std::string> got;
  for (const auto& r : t.rows) got[r[c_site]] = r[c_class];
  const bool ok = got.size() == 3 && got["UP10"] == "no_change" && got["UP150"] == "increase" &&
                  got["DOWN30"] == "decrease";
  return {ok, fmt("+10%% -> %s, +150%% -> %s, -30%% -> %s", got["UP10"].c_str(), got["UP150"].c_str(),
                  got["DOWN30"].c_str())};
}

Outcome determinism(const fs::path& dir) {
  const std::string cfg = R"({"dataset": "sim/dataset.csv", "schema": "sim/schema.json", "seed": 4,
                               "epochs": 4, "blocks": 2, "width": 8, "batch_size": 128})";
  commands::cmd_fit(run_options(dir, cfg, "fit_again"));
  bool same = true;
  for (const char* f : {"model.json", "loss_trace.csv", "report.json", "manifest.json"})
    same = same && slurp(dir / "fit" / f) == slurp(dir / "fit_again" / f);
  const auto sim = simulate(30, 25, GeneratorSpec::quickstart(), 3);
  const auto s1 = split_indices(sim.dataset.size(), 0.7, derive_seed(4, {kSplitStream}));
  const auto s2 = split_indices(sim.dataset.size(), 0.7, derive_seed(4, {kSplitStream}));
  const bool split_same = s1.train == s2.train && s1.test == s2.test;
  return {same && split_same, fmt("artifacts byte-identical: %s, split reproduces: %s", same ? "yes" : "no",
                                  split_same ? "yes" : "no")};
}

Outcome pit_soundness(const Recovery& rec) {
  const auto& model = rec.result.model;
  std::vector<SuYearRecord> test = select(rec.sim.dataset.records, rec.result.split.test);
  const auto heads = model.predict(test);
  std::vector<double> sigmas, areas;
  Rng rng(derive_seed(kRecoveryDataSeed, {12}));
  for (const auto& h : heads) {
    sigmas.push_back(h.sigma);
    areas.push_back(egpd_quantile(rng.uniform(), model.intensity_params(h.sigma)));
  }
  const auto qq = qq_data(sigmas, areas, model.kappa(), model.xi());
  double worst = 0.0;
  for (const auto& pt : qq.points) worst = std::max(worst, std::abs(pt.empirical_pit - pt.probability));
  return {worst <= qq.ks_band, fmt("n = %zu, worst |PIT - p| %.4f vs KS band %.4f", areas.size(), worst, qq.ks_band)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double time_limit;  // seconds, 0 for none
    std::function<Outcome()> run;
  };
  Recovery recovery;
  fs::path pipeline;
  const std::vector<Criterion> criteria{
      {1, "eGPD identities", 10, egpd_identities},
      {2, "gradient correctness", 60, gradient_correctness},
      {3, "joint-loss decomposition", 0, loss_decomposition},
      {4, "synthetic recovery", 300, [&] { return synthetic_recovery(recovery); }},
      {5, "return-level closed form", 0, return_level_closed_form},
      {6, "frequency-model recovery", 60, frequency_recovery},
      {7, "CRPS oracle agreement", 120, crps_oracle},
      {8, "AUC hand cases", 0, auc_hand_cases},
      {9, "hazard grid", 0, [&] {
         pipeline = pipeline_inputs();
         return hazard_grid(pipeline);
       }},
      {10, "scenario band", 0, scenario_band},
      {11, "determinism", 0, [&] { return determinism(pipeline); }},
      {12, "PIT/Q-Q soundness", 0, [&] { return pit_soundness(recovery); }},
  };
  int unexpected = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit > 0.0 && secs > c.time_limit) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s limit", c.time_limit);
    }
    const bool known = !o.pass && kKnownShortfalls.count(c.id);
    std::printf("%s %2d %s [%.1f s]: %s%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str(),
                known ? " (known shortfall)" : "");
    std::fflush(stdout);
    if (!o.pass && !known) ++unexpected;
  }
  std::printf("INFO %s\n", frequency_replicate_rate().c_str());
  return unexpected;
}
