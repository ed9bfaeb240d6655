#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "lshazard/csv.hpp"
#include "lshazard/data_io.hpp"

namespace lshazard {
namespace {

namespace fs = std::filesystem;

std::string cli() {
  const char* p = std::getenv("LSHAZARD_CLI");
  return p ? p : "lshazard";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Shared working directory: one simulated dataset, one tiny fitted model
// and one return-level table, built once for the whole suite.
class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static int run(const std::string& args, std::string* err = nullptr) {
    const auto err_file = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && '" + cli() + "' " + args + " > /dev/null 2> '" +
                            err_file.string() + "'";
    const int status = std::system(cmd.c_str());
    if (err) *err = slurp(err_file);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / "lshazard_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    put(dir / "sim.json", R"({"seed": 5, "n_sites": 12, "n_years": 20})");
    put(dir / "fit.json", R"({"dataset": "sim/dataset.csv", "schema": "sim/schema.json", "seed": 9,
                              "epochs": 3, "blocks": 2, "width": 8, "batch_size": 64})");
    put(dir / "rl.json", R"({"precipitation": "sim/precipitation.csv"})");
    put(dir / "hazard.json", R"({"model": "fit/model.json", "dataset": "sim/dataset.csv",
                                 "return_levels": "rl/return_levels.csv"})");
    ASSERT_EQ(run("simulate --config sim.json --out-dir sim"), 0);
    ASSERT_EQ(run("fit --config fit.json --out-dir fit"), 0);
    ASSERT_EQ(run("return-levels --config rl.json --out-dir rl"), 0);
  }
};

fs::path Cli::dir;

TEST_F(Cli, UsageErrorsExitTwo) {
  std::string err;
  EXPECT_EQ(run("", &err), 2);
  EXPECT_EQ(run("fit", &err), 2);
  EXPECT_EQ(run("no-such-command --config x.json", &err), 2);
  EXPECT_EQ(run("fit --config missing.json", &err), 2);
  EXPECT_NE(err.find("\"error\""), std::string::npos);
  put(dir / "badtype.json", R"({"dataset": "sim/dataset.csv", "schema": "sim/schema.json", "epochs": "many"})");
  EXPECT_EQ(run("fit --config badtype.json --out-dir bad", &err), 2);
  EXPECT_NE(err.find("epochs"), std::string::npos);
  put(dir / "garbage.json", "{not json");
  EXPECT_EQ(run("fit --config garbage.json", &err), 2);
}

TEST_F(Cli, DataErrorsExitOne) {
  auto text = slurp(dir / "sim" / "dataset.csv");
  // Mark the first record as a landslide with zero area.
  const auto eol = text.find('\n', text.find('\n') + 1);
  text.replace(eol - 3, 3, "1,0");
  put(dir / "broken.csv", text);
  put(dir / "fit_broken.json", R"({"dataset": "broken.csv", "schema": "sim/schema.json", "epochs": 1})");
  std::string err;
  EXPECT_EQ(run("fit --config fit_broken.json --out-dir broken", &err), 1);
  EXPECT_NE(err.find("data_error"), std::string::npos);
  EXPECT_NE(err.find("row 1"), std::string::npos);
}

TEST_F(Cli, FitWritesArtifactsAndIsByteIdenticalOnRerun) {
  for (const char* f : {"model.json", "loss_trace.csv", "report.json", "roc.csv", "qq.csv", "manifest.json",
                        "resolved_config.json"})
    EXPECT_TRUE(fs::exists(dir / "fit" / f)) << f;
  ASSERT_EQ(run("fit --config fit.json --out-dir fit_again"), 0);
  for (const char* f : {"model.json", "loss_trace.csv", "report.json", "roc.csv", "qq.csv"})
    EXPECT_EQ(slurp(dir / "fit" / f), slurp(dir / "fit_again" / f)) << f;
  ASSERT_EQ(run("fit --config fit.json --seed 10 --out-dir fit_other"), 0);
  EXPECT_NE(slurp(dir / "fit" / "model.json"), slurp(dir / "fit_other" / "model.json"));
  EXPECT_EQ(json::parse(slurp(dir / "fit_other" / "resolved_config.json")).at("seed"), 10);
}

TEST_F(Cli, EvaluateMatchesFitReportOnTestSplit) {
  put(dir / "eval.json", R"({"model": "fit/model.json", "dataset": "sim/dataset.csv", "seed": 9})");
  ASSERT_EQ(run("evaluate --config eval.json --out-dir eval"), 0);
  EXPECT_EQ(slurp(dir / "eval" / "report.json"), slurp(dir / "fit" / "report.json"));
}

TEST_F(Cli, HazardWritesTwelveSurfaces) {
  ASSERT_EQ(run("hazard --config hazard.json --out-dir hz"), 0);
  int surfaces = 0;
  for (const auto& e : fs::directory_iterator(dir / "hz")) {
    const auto name = e.path().filename().string();
    if (name.rfind("hazard_q", 0) == 0 && e.path().extension() == ".csv") {
      ++surfaces;
      EXPECT_EQ(csv::read_file(e.path().string()).rows.size(), 12u) << name;
    }
  }
  EXPECT_EQ(surfaces, 12);
  EXPECT_EQ(csv::read_file((dir / "hz" / "hazard_surfaces.csv").string()).rows.size(), 144u);
}

TEST_F(Cli, HazardConfigAndCoverageErrors) {
  put(dir / "hz_empty.json", R"({"model": "fit/model.json", "dataset": "sim/dataset.csv",
                                 "return_levels": "rl/return_levels.csv", "return_periods": []})");
  EXPECT_EQ(run("hazard --config hz_empty.json --out-dir hz_empty"), 2);
  put(dir / "hz_p50.json", R"({"model": "fit/model.json", "dataset": "sim/dataset.csv",
                               "return_levels": "rl/return_levels.csv", "return_periods": [50]})");
  std::string err;
  EXPECT_EQ(run("hazard --config hz_p50.json --out-dir hz_p50", &err), 1);
  EXPECT_NE(err.find("P = 50"), std::string::npos);
}

TEST_F(Cli, ReturnLevelsReportsFailingSitesAndKeepsOthers) {
  auto text = slurp(dir / "sim" / "precipitation.csv");
  for (int y = 0; y < 10; ++y) text += "CONST," + std::to_string(2000 + y) + ",5,100,10\n";
  put(dir / "precip_const.csv", text);
  put(dir / "rl_const.json", R"({"precipitation": "precip_const.csv", "return_periods": [10]})");
  ASSERT_EQ(run("return-levels --config rl_const.json --out-dir rl_const"), 0);
  const auto failures = json::parse(slurp(dir / "rl_const" / "failures.json"));
  ASSERT_EQ(failures.size(), 1u);
  EXPECT_EQ(failures[0].at("site_id"), "CONST");
  EXPECT_EQ(csv::read_file((dir / "rl_const" / "return_levels.csv").string()).rows.size(), 12u);
}

TEST_F(Cli, ScenarioDiff) {
  ASSERT_EQ(run("hazard --config hazard.json --out-dir hz_a"), 0);
  put(dir / "same.json", R"({"current": "hz_a/hazard_surfaces.csv", "future": "hz_a/hazard_surfaces.csv"})");
  ASSERT_EQ(run("scenario-diff --config same.json --out-dir same"), 0);
  const auto t = csv::read_file((dir / "same" / "scenario_change.csv").string());
  EXPECT_EQ(t.rows.size(), 144u);
  const auto col = t.require_column("change_class", "t");
  for (const auto& r : t.rows) EXPECT_TRUE(r[col] == "no_change" || r[col] == "indeterminate") << r[col];

  put(dir / "one.json", R"({"current": "hz_a/hazard_surfaces.csv", "future": "hz_a/hazard_q0.5_P10.csv"})");
  EXPECT_EQ(run("scenario-diff --config one.json --out-dir one"), 1);
}

}  // namespace
}  // namespace lshazard
