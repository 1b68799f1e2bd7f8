// Command-line front end: wsampler <generate|run|combine|evaluate|pipeline> --config FILE
#include "wsampler/error.hpp"
#include "wsampler/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace pl = wsampler::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Subset-posterior sampling and combination experiments"};
  app.set_version_flag("--version", pl::kVersion);
  app.require_subcommand(1);

  std::string config_path;
  unsigned workers = 1;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  long long replicate = 0;

  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  app.add_option("--workers", workers, "worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--seed", seed, "override the master seed");
  app.add_option("--out", out, "output directory (overrides the config)");
  app.add_flag("--force", force, "rerun even when outputs are up to date");

  auto* gen = app.add_subcommand("generate", "simulate the dataset and write the truth file");
  auto* run = app.add_subcommand("run", "partition the data and run every subset chain");
  auto* comb = app.add_subcommand("combine", "combine subset draws with each configured method");
  auto* eval = app.add_subcommand("evaluate", "metrics against the reference posterior");
  auto* pipe = app.add_subcommand("pipeline", "generate, run, combine and evaluate every replicate");
  for (auto* sub : {gen, run, comb, eval})
    sub->add_option("--replicate", replicate, "replicate index for seeds")->check(CLI::NonNegativeNumber);
  pipe->fallthrough();
  for (auto* sub : {gen, run, comb, eval}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pl::config_error;
  }

  pl::ExperimentConfig cfg;
  try {
    cfg = pl::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.output = out;
  } catch (const wsampler::Error& e) {
    std::cerr << e.what() << "\n";
    return pl::config_error;
  }

  pl::RunOptions opts;
  opts.out = cfg.output;
  opts.workers = workers;
  opts.force = force;
  opts.log = &std::cerr;

  try {
    if (*gen) return pl::cmd_generate(cfg, opts, replicate);
    if (*run) return pl::cmd_run(cfg, opts, replicate);
    if (*comb) return pl::cmd_combine(cfg, opts, replicate);
    if (*eval) return pl::cmd_evaluate(cfg, opts, replicate);
    return pl::cmd_pipeline(cfg, opts);
  } catch (const wsampler::Error& e) {
    std::cerr << e.what() << "\n";
    return e.code() == wsampler::Errc::config ? pl::config_error : 1;
  }
}
