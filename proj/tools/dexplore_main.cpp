// dexplore: plan | extract | train | eval | plot
//
// Every setting in the config file can be overridden by an environment
// variable DEXPLORE_<SECTION>_<KEY>, e.g. DEXPLORE_PLANNER_MAX_NODES=500.
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "dexplore/errors.hpp"
#include "dexplore/experiment.hpp"
#include "dexplore/io.hpp"
#include "dexplore/plot.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string tree, resets, checkpoint, kind = "training";
  int episodes = 10;
  std::vector<std::string> inputs;
  bool quiet = false;
};

dexplore::ExperimentContext context(const Options& o) {
  auto cfg = o.config.empty() ? dexplore::parse_config("", dexplore::process_environment())
                              : dexplore::load_config(o.config, dexplore::process_environment());
  if (!o.out.empty()) cfg.output = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  return dexplore::ExperimentContext(std::move(cfg));
}

void cmd_plan(const Options& o) {
  const auto ctx = context(o);
  for (auto seed : ctx.config.seeds) {
    const auto a = dexplore::run_plan(ctx, seed, ctx.config.output);
    std::cout << "seed " << seed << ": " << a.result.tree.size() << " nodes, max rotation "
              << a.result.coverage.back().max_rotation << " rad\n  " << a.tree_path << "\n  " << a.coverage_path
              << "\n";
  }
}

void cmd_extract(const Options& o) {
  const auto ctx = context(o);
  const auto a = dexplore::run_extract(ctx, o.tree, ctx.config.output);
  std::cout << a.summary << a.resets_path << "\n";
}

void cmd_train(const Options& o) {
  const auto ctx = context(o);
  for (auto seed : ctx.config.seeds) {
    const auto a = dexplore::run_train(ctx, seed, o.resets, ctx.config.output);
    std::cout << "seed " << seed << ": " << a.result.updates.size() << " updates";
    if (!a.result.evals.empty()) std::cout << ", final eval rotation " << a.result.evals.back().mean_rotation;
    std::cout << "\n  " << a.metrics_path << "\n  " << a.eval_path << "\n  " << a.checkpoint_path << "\n";
  }
}

void cmd_eval(const Options& o) {
  const auto ctx = context(o);
  const std::uint64_t seed = ctx.config.seeds.front();
  const auto a = dexplore::run_eval(ctx, o.checkpoint, o.episodes, seed, o.resets, ctx.config.output);
  std::cout << "median revolutions " << a.median_revolutions << ", mean speed " << a.mean_speed
            << " rad/s\n  " << a.episodes_path << "\n";
}

void cmd_plot(const Options& o) {
  const auto kind = dexplore::plot_kind(o.kind);
  std::vector<dexplore::Series> series;
  for (const auto& path : o.inputs) {
    try {
      series.push_back(dexplore::parse_series_csv(dexplore::read_file(path), kind.x_column, kind.y_column, path));
    } catch (const dexplore::ContractError& e) {
      throw dexplore::ContractError(path + ": " + e.what());
    }
  }
  const std::string dir = o.out.empty() ? "." : o.out;
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / (o.kind + ".svg")).string();
  dexplore::write_file(path, dexplore::render_svg(series, kind));
  std::cout << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exploration trees and reset distributions for learning in-hand rotation"};
  app.require_subcommand(1);
  Options o;
  app.add_flag("-q,--quiet", o.quiet, "Suppress progress messages");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seeds, "Seed(s); overrides experiment.seeds");
    sub->add_option("--out", o.out, "Output directory; overrides experiment.output");
  };

  auto* plan = app.add_subcommand("plan", "Grow an exploration tree, write tree file and coverage CSV");
  add_common(plan);

  auto* extract = app.add_subcommand("extract", "Build a reset set from a tree file");
  add_common(extract);
  extract->add_option("--tree", o.tree, "Tree file")->required()->check(CLI::ExistingFile);

  auto* trainc = app.add_subcommand("train", "Train a rotation policy, write metrics and checkpoint");
  add_common(trainc);
  trainc->add_option("--resets", o.resets, "Reset-set file (reset distribution 'tree')")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Run deterministic evaluation episodes of a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Policy checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--episodes", o.episodes, "Number of episodes");
  eval->add_option("--resets", o.resets, "Start from states of this reset set")->check(CLI::ExistingFile);

  auto* plot = app.add_subcommand("plot", "Render CSV files as an SVG line plot with a min-max band");
  plot->add_option("files", o.inputs, "CSV files (one series each)")->required()->check(CLI::ExistingFile);
  plot->add_option("--kind", o.kind, "coverage | training | eval");
  plot->add_option("--out", o.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  dexplore::set_log_enabled(!o.quiet);

  try {
    if (*plan) cmd_plan(o);
    else if (*extract) cmd_extract(o);
    else if (*trainc) cmd_train(o);
    else if (*eval) cmd_eval(o);
    else if (*plot) cmd_plot(o);
  } catch (const dexplore::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
