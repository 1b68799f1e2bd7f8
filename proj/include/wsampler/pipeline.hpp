#pragma once

#include "wsampler/combiners.hpp"
#include "wsampler/engine.hpp"
#include "wsampler/io.hpp"
#include "wsampler/models.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace wsampler::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kVersion = "0.3.0";

// Exit codes shared by the library commands and the CLI.
enum Exit : int { ok = 0, config_error = 2, chain_error = 3, combine_error = 4, missing_reference = 5 };

struct DataSpec {
  Index n = 10000;
  Index p = 5;          // logistic only
  double rho = 0.0;     // logistic only
  double prob = 0.1;    // beta_bernoulli only
  std::optional<std::uint64_t> seed;
  std::optional<std::string> path;  // read observations instead of generating
};

struct ChainSpec {
  Index iterations = 12000;
  Index burnin = 2000;
  Index thin = 1;
  std::string proposal = "auto";  // auto, adaptive_rw, gibbs, exact
};

/// One requested combiner with its settings resolved against the per-tag
/// defaults (see method_defaults). Unknown keys are rejected at parse time.
struct MethodSpec {
  std::string tag;
  json settings = json::object();

  Index integer(const std::string& key) const { return settings.at(key).get<Index>(); }
  double real(const std::string& key) const { return settings.at(key).get<double>(); }
  std::string text(const std::string& key) const { return settings.at(key).get<std::string>(); }
};

/// Default settings of a method tag; throws Error(config) for unknown tags.
json method_defaults(const std::string& tag);

struct ReferenceSpec {
  std::string kind = "auto";  // auto, analytic, chain
  Index iterations = 50000;
  Index burnin = 5000;
  Index thin = 1;
};

struct ExperimentConfig {
  std::string model;
  DataSpec data;
  Index m = 1;
  std::uint64_t seed = 0;
  ChainSpec chain;
  std::vector<MethodSpec> methods;
  std::vector<std::string> metrics{"tv", "kl", "error_ratio"};
  ReferenceSpec reference;
  Index replicates = 1;
  std::string output = "out";
};

/// Throws Error(config) on unknown keys, bad tags, missing seed, bad values.
ExperimentConfig parse_config(const json& doc);
ExperimentConfig load_config(const fs::path& path);
/// Every field written out, keys sorted; parse_config(to_json(c)) round-trips.
json to_json(const ExperimentConfig& c);
std::string canonical_text(const ExperimentConfig& c);

const std::vector<std::string>& supported_methods();
const std::vector<std::string>& supported_models();

std::unique_ptr<Model> make_model(const ExperimentConfig& c);
Proposal chain_proposal(const ExperimentConfig& c);

/// Stage seeds for replicate r.
struct Seeds {
  std::uint64_t data;
  std::uint64_t partition;
  std::uint64_t chains;
  std::uint64_t reference;
  std::uint64_t method(const std::string& tag) const;
  std::uint64_t master;
  Index replicate;
};
Seeds stage_seeds(const ExperimentConfig& c, Index replicate);

struct RunOptions {
  fs::path out;
  unsigned workers = 1;
  bool force = false;
  std::ostream* log = nullptr;  // progress and failure messages
};

// Single-replicate stage commands working inside `opts.out`. Each returns an
// Exit code and never throws for expected failures.
int cmd_generate(const ExperimentConfig& c, const RunOptions& opts, Index replicate = 0);
int cmd_run(const ExperimentConfig& c, const RunOptions& opts, Index replicate = 0);
int cmd_combine(const ExperimentConfig& c, const RunOptions& opts, Index replicate = 0);
int cmd_evaluate(const ExperimentConfig& c, const RunOptions& opts, Index replicate = 0);

/// generate, run, combine, evaluate for every replicate (rep_XX/ when more
/// than one), aggregate.csv across replicates, and manifest.json. A rerun with
/// an unchanged config and intact files is a no-op unless `force`.
int cmd_pipeline(const ExperimentConfig& c, const RunOptions& opts);

}  // namespace wsampler::pipeline
