// rangelab <subcommand> --config <file> [--seed N] [--workers K] [--out DIR]

#include <iostream>

#include "CLI11.hpp"
#include "rangelab/harness.hpp"

int main(int argc, char** argv) {
  using namespace rangelab;
  CLI::App app{"Monte Carlo experiments on the range of planar random walks"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> out;
  for (const auto& name : kSubcommands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON experiment file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides the file)");
    sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string subcommand = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  try {
    config = ExperimentConfig::load(config_path);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "] " << e.what() << '\n';
    return 1;
  }
  if (!config.subcommand.empty() && config.subcommand != subcommand) {
    std::cerr << "warning: config names subcommand '" << config.subcommand << "', running '" << subcommand << "'\n";
  }
  config.subcommand = subcommand;
  if (seed) config.master_seed = *seed;
  if (workers) config.workers = *workers;
  if (out) config.out = *out;

  RunResult result;
  try {
    result = run(config, &std::cerr);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "] " << e.what() << '\n';
    return 2;
  }
  for (const auto& d : result.diagnostics) {
    std::cerr << to_string(d.severity) << " [" << to_string(d.code) << "] " << d.message << '\n';
  }
  if (result.exit_code == 1) return 1;
  std::cout << subcommand << ": " << result.computed << " computed, " << result.reused << " reused, "
            << result.failed << " failed\n";
  for (const auto& a : result.artifacts) std::cout << "  " << config.out << '/' << a << '\n';
  return result.exit_code;
}
