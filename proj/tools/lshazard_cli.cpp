// lshazard: command-line front end. Exit codes: 0 success, 1 computation or
// data error, 2 configuration or usage error. Errors go to stderr as JSON.

#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lshazard/commands.hpp"

namespace {

using lshazard::json;
namespace cmd = lshazard::commands;

constexpr int kExitComputation = 1;
constexpr int kExitConfig = 2;

int report(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landslide hazard modelling"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int threads = 0;

  const std::map<std::string, std::pair<std::string, std::function<void(const cmd::RunOptions&)>>> commands = {
      {"fit", {"Train the occurrence/size network", cmd::cmd_fit}},
      {"evaluate", {"Score a trained model on a dataset", cmd::cmd_evaluate}},
      {"tune-gamma", {"Sweep the loss weight gamma", cmd::cmd_tune_gamma}},
      {"simulate", {"Generate a synthetic dataset", cmd::cmd_simulate}},
      {"return-levels", {"Fit precipitation frequency models and return levels", cmd::cmd_return_levels}},
      {"hazard", {"Hypothesised hazard surfaces for severity levels and return periods", cmd::cmd_hazard}},
      {"scenario-diff", {"Classify hazard change between two scenarios", cmd::cmd_scenario_diff}},
  };
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--threads", threads, "Worker threads (default: HAZ_THREADS or 1)")->check(CLI::NonNegativeNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(kExitConfig, "usage_error", e.what());
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    cmd::RunOptions opt;
    opt.config = lshazard::read_json_file(config_path);
    opt.config_dir = std::filesystem::path(config_path).parent_path();
    opt.seed = seed;
    opt.out_dir = out_dir;
    opt.threads = threads;
    commands.at(name).second(opt);
  } catch (const lshazard::ConfigError& e) {
    return report(kExitConfig, e.kind(), e.what());
  } catch (const lshazard::Error& e) {
    return report(kExitComputation, e.kind(), e.what());
  } catch (const json::exception& e) {
    return report(kExitConfig, "config_error", e.what());
  } catch (const std::exception& e) {
    return report(kExitComputation, "internal_error", e.what());
  }
  return 0;
}
