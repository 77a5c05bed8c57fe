// Batch front end: wmfg <subcommand> [--config PATH] [--out DIR] [--workers N] [--seed S]
#include <iostream>

#include <CLI11.hpp>

#include "wmfg/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Monte-Carlo solver for mean-field games in weak formulation"};
  app.require_subcommand(1);
  wmfg::cli::RunOptions opts;
  std::string config, out;
  std::uint64_t seed = 0;
  for (const auto& name : wmfg::cli::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "run configuration (JSON)");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--workers", opts.workers, "worker threads (results do not depend on it)");
    sub->add_option("--seed", seed, "override monte_carlo.seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  auto* chosen = app.get_subcommands().front();
  opts.subcommand = chosen->get_name();
  if (chosen->count("--config")) opts.config_path = config;
  if (chosen->count("--out")) opts.out_dir = out;
  if (chosen->count("--seed")) opts.seed = seed;
  return wmfg::cli::run(opts, std::cout, std::cerr);
}
