#include "wsampler/pipeline.hpp"

#include "wsampler/error.hpp"
#include "wsampler/evaluation.hpp"
#include "wsampler/kde.hpp"
#include "wsampler/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <set>

namespace wsampler::pipeline {

namespace {

[[noreturn]] void config_fail(const std::string& what) { fail(Errc::config, "config: " + what); }

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) config_fail(where + " must be an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) config_fail("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

Index get_count(const json& obj, const std::string& key, Index fallback, Index min_value,
                const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer()) config_fail(where + "." + key + " must be an integer");
  const auto x = v.get<long long>();
  if (x < min_value)
    config_fail(where + "." + key + " must be at least " + std::to_string(min_value));
  return static_cast<Index>(x);
}

double get_real(const json& obj, const std::string& key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) config_fail(where + "." + key + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) config_fail(where + "." + key + " must be finite");
  return x;
}

std::string get_text(const json& obj, const std::string& key, const std::string& fallback,
                     const std::string& where) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_string()) config_fail(where + "." + key + " must be a string");
  return obj.at(key).get<std::string>();
}

std::uint64_t get_seed(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  config_fail(where + " must be a non-negative integer");
}

bool one_of(const std::string& s, std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (s == o) return true;
  return false;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

MethodSpec parse_method(const json& entry) {
  MethodSpec spec;
  json given = json::object();
  if (entry.is_string()) {
    spec.tag = entry.get<std::string>();
  } else if (entry.is_object()) {
    if (!entry.contains("tag") || !entry.at("tag").is_string()) config_fail("every method needs a tag");
    spec.tag = entry.at("tag").get<std::string>();
    given = entry;
    given.erase("tag");
  } else {
    config_fail("methods entries must be tags or objects");
  }
  spec.settings = method_defaults(spec.tag);
  const std::string where = "methods." + spec.tag;
  for (const auto& [k, v] : given.items()) {
    if (!spec.settings.contains(k)) config_fail("unknown key '" + where + "." + k + "'");
    const json& d = spec.settings.at(k);
    if (d.is_string()) {
      spec.settings[k] = get_text(given, k, "", where);
    } else if (d.is_number_integer()) {
      spec.settings[k] = get_count(given, k, 0, 0, where);
    } else {
      spec.settings[k] = get_real(given, k, 0.0, where);
    }
  }
  const auto& s = spec.settings;
  if (spec.tag == "refinement") {
    if (s.at("steps").get<Index>() < 1 || s.at("inner_iterations").get<Index>() < 1 ||
        s.at("draws").get<Index>() < 2)
      config_fail(where + ": steps, inner_iterations >= 1 and draws >= 2 are required");
    if (!one_of(s.at("split").get<std::string>(), {"per_subset", "aggregate"}))
      config_fail(where + ".split must be per_subset or aggregate");
  }
  if (spec.tag == "rejection" || spec.tag == "rejection_direct") {
    const double t = s.at("target_acceptance").get<double>();
    if (!(t > 0.0 && t < 1.0)) config_fail(where + ".target_acceptance must lie in (0, 1)");
    if (s.at("max_proposals").get<Index>() < 1) config_fail(where + ".max_proposals must be positive");
  }
  if (spec.tag == "kernel" && s.at("grid_points").get<Index>() < 16)
    config_fail(where + ".grid_points must be at least 16");
  if (spec.tag == "sequential") {
    if (s.at("n0").get<Index>() < 2 || s.at("replicas").get<Index>() < 1 ||
        s.at("grid_points").get<Index>() < 16 || s.at("inner_iterations").get<Index>() < 1 ||
        s.at("max_proposals").get<Index>() < 1)
      config_fail(where + ": n0 >= 2, replicas >= 1, grid_points >= 16 required");
    if (!(s.at("bandwidth_scale").get<double>() > 0.0))
      config_fail(where + ".bandwidth_scale must be positive");
  }
  return spec;
}

}  // namespace

const std::vector<std::string>& supported_methods() {
  static const std::vector<std::string> tags{"simple_average", "weighted_average", "kernel",
                                             "laplace",        "rejection",        "rejection_direct",
                                             "refinement",     "sequential"};
  return tags;
}

const std::vector<std::string>& supported_models() {
  static const std::vector<std::string> tags{"beta_bernoulli", "logistic", "mixture"};
  return tags;
}

json method_defaults(const std::string& tag) {
  if (tag == "simple_average" || tag == "weighted_average") return json::object();
  if (tag == "kernel") return {{"grid_points", 2048}};
  if (tag == "laplace") return {{"draws", 0}};
  if (tag == "rejection" || tag == "rejection_direct")
    return {{"target_acceptance", 0.1},
            {"output_draws", 0},
            {"max_proposals", 2000000},
            {"pilot_size", 2000}};
  if (tag == "refinement")
    return {{"steps", 10}, {"inner_iterations", 100}, {"draws", 2000}, {"split", "per_subset"}};
  if (tag == "sequential")
    return {{"n0", 500},          {"replicas", 200},      {"burnin", 100},
            {"grid_points", 512}, {"bandwidth_scale", 1.0}, {"max_proposals", 200000},
            {"inner_iterations", 1}};
  config_fail("unknown method tag '" + tag + "'");
}

ExperimentConfig parse_config(const json& doc) {
  reject_unknown(doc, "", {"model", "seed", "m", "data", "chain", "methods", "metrics", "reference",
                           "replicates", "output"});
  ExperimentConfig c;
  if (!doc.contains("model") || !doc.at("model").is_string()) config_fail("model tag is required");
  c.model = doc.at("model").get<std::string>();
  const auto& models = supported_models();
  if (std::find(models.begin(), models.end(), c.model) == models.end())
    config_fail("unknown model tag '" + c.model + "'");
  if (!doc.contains("seed")) config_fail("seed is required");
  c.seed = get_seed(doc.at("seed"), "seed");
  if (!doc.contains("m")) config_fail("m is required");
  c.m = get_count(doc, "m", 1, 1, "");

  const json data = doc.value("data", json::object());
  reject_unknown(data, "data", {"n", "p", "rho", "prob", "seed", "path"});
  c.data.n = get_count(data, "n", c.data.n, 1, "data");
  c.data.p = get_count(data, "p", c.data.p, 1, "data");
  c.data.rho = get_real(data, "rho", c.data.rho, "data");
  c.data.prob = get_real(data, "prob", c.data.prob, "data");
  if (data.contains("seed")) c.data.seed = get_seed(data.at("seed"), "data.seed");
  if (data.contains("path")) {
    c.data.path = get_text(data, "path", "", "data");
    if (!fs::exists(*c.data.path)) config_fail("data.path '" + *c.data.path + "' does not exist");
  }
  if (c.data.rho < 0.0 || c.data.rho >= 1.0) config_fail("data.rho must lie in [0, 1)");
  if (c.data.prob < 0.0 || c.data.prob > 1.0) config_fail("data.prob must lie in [0, 1]");
  if (!c.data.path && c.m > c.data.n) config_fail("m exceeds the number of observations");

  const json chain = doc.value("chain", json::object());
  reject_unknown(chain, "chain", {"iterations", "burnin", "thin", "proposal"});
  c.chain.iterations = get_count(chain, "iterations", c.chain.iterations, 1, "chain");
  c.chain.burnin = get_count(chain, "burnin", c.chain.burnin, 0, "chain");
  c.chain.thin = get_count(chain, "thin", c.chain.thin, 1, "chain");
  c.chain.proposal = get_text(chain, "proposal", c.chain.proposal, "chain");
  if (!one_of(c.chain.proposal, {"auto", "adaptive_rw", "gibbs", "exact"}))
    config_fail("chain.proposal must be auto, adaptive_rw, gibbs or exact");
  if ((c.chain.iterations - c.chain.burnin) / c.chain.thin < 2)
    config_fail("chain settings retain fewer than two draws");

  if (!doc.contains("methods") || !doc.at("methods").is_array() || doc.at("methods").empty())
    config_fail("methods must be a non-empty list");
  std::set<std::string> seen;
  for (const auto& e : doc.at("methods")) {
    c.methods.push_back(parse_method(e));
    if (!seen.insert(c.methods.back().tag).second)
      config_fail("method '" + c.methods.back().tag + "' listed twice");
  }

  if (doc.contains("metrics")) {
    if (!doc.at("metrics").is_array()) config_fail("metrics must be a list");
    c.metrics.clear();
    for (const auto& e : doc.at("metrics")) {
      if (!e.is_string() || !one_of(e.get<std::string>(), {"tv", "kl", "error_ratio"}))
        config_fail("metrics entries must be tv, kl or error_ratio");
      c.metrics.push_back(e.get<std::string>());
    }
  }

  const json ref = doc.value("reference", json::object());
  reject_unknown(ref, "reference", {"kind", "iterations", "burnin", "thin"});
  c.reference.kind = get_text(ref, "kind", c.reference.kind, "reference");
  if (!one_of(c.reference.kind, {"auto", "analytic", "chain"}))
    config_fail("reference.kind must be auto, analytic or chain");
  if (c.reference.kind == "analytic" && c.model != "beta_bernoulli")
    config_fail("an analytic reference is only available for beta_bernoulli");
  c.reference.iterations = get_count(ref, "iterations", c.reference.iterations, 1, "reference");
  c.reference.burnin = get_count(ref, "burnin", c.reference.burnin, 0, "reference");
  c.reference.thin = get_count(ref, "thin", c.reference.thin, 1, "reference");
  if ((c.reference.iterations - c.reference.burnin) / c.reference.thin < 2)
    config_fail("reference chain retains fewer than two draws");

  c.replicates = get_count(doc, "replicates", c.replicates, 1, "");
  c.output = get_text(doc, "output", c.output, "");
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) config_fail("file '" + path.string() + "' not found");
  json doc;
  try {
    doc = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    config_fail(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = c.model;
  j["seed"] = c.seed;
  j["m"] = c.m;
  json data = {{"n", c.data.n}, {"p", c.data.p}, {"rho", c.data.rho}, {"prob", c.data.prob}};
  if (c.data.seed) data["seed"] = *c.data.seed;
  if (c.data.path) data["path"] = *c.data.path;
  j["data"] = data;
  j["chain"] = {{"iterations", c.chain.iterations},
                {"burnin", c.chain.burnin},
                {"thin", c.chain.thin},
                {"proposal", c.chain.proposal}};
  json methods = json::array();
  for (const auto& mspec : c.methods) {
    json e = mspec.settings;
    e["tag"] = mspec.tag;
    methods.push_back(e);
  }
  j["methods"] = methods;
  j["metrics"] = c.metrics;
  j["reference"] = {{"kind", c.reference.kind},
                    {"iterations", c.reference.iterations},
                    {"burnin", c.reference.burnin},
                    {"thin", c.reference.thin}};
  j["replicates"] = c.replicates;
  j["output"] = c.output;
  return j;
}

std::string canonical_text(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

std::unique_ptr<Model> make_model(const ExperimentConfig& c) {
  if (c.model == "logistic") return std::make_unique<LogisticModel>(c.data.p);
  if (c.model == "beta_bernoulli") return std::make_unique<BetaBernoulliModel>();
  if (c.model == "mixture") return std::make_unique<MixtureModel>();
  config_fail("unknown model tag '" + c.model + "'");
}

Proposal chain_proposal(const ExperimentConfig& c) {
  if (c.chain.proposal == "adaptive_rw") return Proposal::adaptive_rw;
  if (c.chain.proposal == "gibbs") return Proposal::gibbs;
  if (c.chain.proposal == "exact") return Proposal::exact;
  return c.model == "mixture" ? Proposal::gibbs : Proposal::adaptive_rw;
}

std::uint64_t Seeds::method(const std::string& tag) const {
  return stream_key(master, {0xC0B1, fnv1a(tag), static_cast<std::uint64_t>(replicate)});
}

Seeds stage_seeds(const ExperimentConfig& c, Index replicate) {
  const auto r = static_cast<std::uint64_t>(replicate);
  Seeds s{};
  s.master = c.seed;
  s.replicate = replicate;
  s.data = c.data.seed ? (replicate == 0 ? *c.data.seed : stream_key(*c.data.seed, {r}))
                       : stream_key(c.seed, {0xDA7A, r});
  s.partition = stream_key(c.seed, {0x9A27, r});
  s.chains = stream_key(c.seed, {0xC4A1, r});
  s.reference = stream_key(c.seed, {0x2EFE, r});
  return s;
}

// =================================================================== stages

namespace {

using Clock = std::chrono::steady_clock;

std::string two_digits(Index i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%02lld", static_cast<long long>(i));
  return buf;
}

struct Workspace {
  const ExperimentConfig& c;
  fs::path root;  // manifest directory
  fs::path dir;   // replicate directory
  Index replicate;
  Seeds seeds;
  WorkerPool pool;
  std::ostream& log;
  json& manifest;
};

std::string rel(const Workspace& w, const fs::path& p) {
  return fs::relative(p, w.root).generic_string();
}

void record(Workspace& w, const fs::path& p) {
  w.manifest["files"][rel(w, p)] = io::sha256_file(p);
}

int exit_for(Errc code, int stage_default) { return code == Errc::config ? config_error : stage_default; }

std::vector<std::string> model_names(const ExperimentConfig& c) { return make_model(c)->parameter_names(); }

Dataset load_data(const Workspace& w, const Model& model) {
  const fs::path p = w.dir / "data.csv";
  if (!fs::exists(p)) fail(Errc::config, "dataset " + p.string() + " not found; run generate first");
  return io::read_dataset_csv(p, model.schema());
}

int stage_generate(Workspace& w) {
  const auto model = make_model(w.c);
  Dataset d;
  json truth = nullptr;
  if (w.c.data.path) {
    d = io::read_dataset_csv(*w.c.data.path, model->schema());
  } else if (w.c.model == "logistic") {
    auto gen = generate_logistic(w.c.data.n, w.c.data.p, w.c.data.rho, w.seeds.data);
    d = std::move(gen.data);
    truth = io::vector_json(gen.true_beta);
  } else if (w.c.model == "beta_bernoulli") {
    d = generate_bernoulli(w.c.data.n, w.c.data.prob, w.seeds.data);
    truth = json::array({w.c.data.prob});
  } else {
    d = generate_mixture(w.c.data.n, w.seeds.data);
    truth = json::array({0.0, 2.0, 4.0});
  }
  if (w.c.m > d.n()) fail(Errc::config, "m exceeds the number of observations");
  io::write_dataset_csv(w.dir / "data.csv", d);
  json t = {{"model", w.c.model},
            {"parameters", model->parameter_names()},
            {"true_theta", truth},
            {"n", d.n()},
            {"seed", w.seeds.data}};
  io::write_json(w.dir / "truth.json", t);
  record(w, w.dir / "data.csv");
  record(w, w.dir / "truth.json");
  w.log << "generate: " << d.n() << " observations\n";
  return ok;
}

Partition make_partition(const Workspace& w, const Dataset& d) {
  return partition(d, w.c.m, w.seeds.partition);
}

std::string reference_kind(const ExperimentConfig& c) {
  if (c.reference.kind != "auto") return c.reference.kind;
  return c.model == "beta_bernoulli" ? "analytic" : "chain";
}

int stage_run(Workspace& w) {
  const auto model = make_model(w.c);
  const Dataset d = load_data(w, *model);
  const Partition part = make_partition(w, d);
  ChainConfig cc;
  cc.iterations = w.c.chain.iterations;
  cc.burnin = w.c.chain.burnin;
  cc.thin = w.c.chain.thin;
  cc.seed = w.seeds.chains;
  cc.proposal = chain_proposal(w.c);
  std::vector<SubsetRun> runs;
  try {
    runs = run_all_subsets(*model, d, part, PriorFraction(w.c.m), cc, w.pool);
  } catch (const Error& e) {
    fail(e.code() == Errc::config ? Errc::invalid_argument : e.code(), e.what());
  }
  io::CsvTable assign;
  assign.header = {"row", "subset"};
  for (Index r = 0; r < part.n(); ++r)
    assign.rows.push_back({std::to_string(r), std::to_string(part.assignment[static_cast<std::size_t>(r)] + 1)});
  io::write_csv(w.dir / "subsets" / "partition.csv", assign);
  record(w, w.dir / "subsets" / "partition.csv");
  for (const auto& run : runs) {
    const std::string stem = "subset_" + two_digits(run.subset_id + 1);
    io::write_draws_csv(w.dir / "subsets" / (stem + ".csv"), run.draws);
    json j = io::subset_run_json(run);
    j["rows"] = part.members[static_cast<std::size_t>(run.subset_id)].size();
    j["proposal"] = proposal_name(cc.proposal);
    io::write_json(w.dir / "subsets" / (stem + ".json"), j);
    record(w, w.dir / "subsets" / (stem + ".csv"));
    record(w, w.dir / "subsets" / (stem + ".json"));
  }
  w.log << "run: " << runs.size() << " subset chains\n";

  // reference
  if (reference_kind(w.c) == "analytic") {
    const auto& bb = dynamic_cast<const BetaBernoulliModel&>(*model);
    const BetaParams bp = beta_posterior_params(bb, bernoulli_counts(d), PriorFraction(1));
    const double s = bp.a + bp.b;
    json j = {{"kind", "analytic"},
              {"family", "beta"},
              {"a", bp.a},
              {"b", bp.b},
              {"mean", bp.a / s},
              {"variance", bp.a * bp.b / (s * s * (s + 1.0))}};
    io::write_json(w.dir / "reference.json", j);
  } else {
    ChainConfig rc = cc;
    rc.iterations = w.c.reference.iterations;
    rc.burnin = w.c.reference.burnin;
    rc.thin = w.c.reference.thin;
    rc.seed = w.seeds.reference;
    SubsetRun ref = run_chain(*model, d, PriorFraction(1), rc, 0);
    ref.draws.meta().source = "reference";
    ref.draws.meta().seed_lineage = "seed=" + std::to_string(rc.seed) + "/reference";
    io::write_draws_csv(w.dir / "reference.csv", ref.draws);
    json j = io::subset_run_json(ref);
    j.erase("subset_id");
    j["kind"] = "chain";
    io::write_json(w.dir / "reference.json", j);
    record(w, w.dir / "reference.csv");
    w.log << "run: reference chain, " << ref.draws.draws() << " draws\n";
  }
  record(w, w.dir / "reference.json");
  return ok;
}

std::vector<SubsetRun> load_runs(const Workspace& w) {
  std::vector<SubsetRun> runs;
  for (Index i = 0; i < w.c.m; ++i) {
    const std::string stem = "subset_" + two_digits(i + 1);
    const fs::path csv = w.dir / "subsets" / (stem + ".csv");
    const fs::path meta = w.dir / "subsets" / (stem + ".json");
    if (!fs::exists(csv) || !fs::exists(meta))
      fail(Errc::io, "subset draws " + csv.string() + " not found; run the chains first");
    const json j = io::read_json(meta);
    DrawMatrix dm = io::read_draws_csv(csv);
    dm.meta().model_tag = j.value("model", "");
    dm.meta().source = j.value("source", "");
    dm.meta().seed_lineage = j.value("seed_lineage", "");
    SubsetRun run = make_subset_run(i, std::move(dm));
    run.acceptance_rate = j.value("acceptance_rate", 1.0);
    run.proposal_scale = j.value("proposal_scale", 0.0);
    if (j.contains("laplace") && j.at("laplace").is_object()) {
      LaplaceApprox la;
      la.mode = io::vector_from_json(j.at("laplace").at("mode"));
      const auto& rows = j.at("laplace").at("cov");
      la.cov.resize(la.mode.size(), la.mode.size());
      for (Index r = 0; r < la.mode.size(); ++r)
        la.cov.row(r) = io::vector_from_json(rows.at(static_cast<std::size_t>(r))).transpose();
      la.log_det = log_det_spd(la.cov);
      la.iterations = j.at("laplace").value("iterations", Index{0});
      run.laplace = std::move(la);
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

CombineResult refine_method(const Workspace& w, const MethodSpec& ms, const Model& model,
                            const Dataset& d, const Partition& part, std::span<const SubsetRun> runs,
                            std::uint64_t seed) {
  const Index n = ms.integer("draws");
  const auto names = model.parameter_names();
  DrawMatrix init;
  Mat sigma;
  std::string note;
  try {
    const LaplaceApprox la = laplace(model, d, PriorFraction(1));
    init = gaussian_draws(la.mode, la.cov, n, stream_key(seed, {1}), names);
    sigma = la.cov;
    note = "initial draws from the full-data Laplace approximation";
  } catch (const Error&) {
    const CombineResult avg = combine_weighted_average(runs);
    Mat v(n, avg.draws.dim());
    for (Index k = 0; k < n; ++k) v.row(k) = avg.draws.values().row(k % avg.draws.draws());
    init = DrawMatrix(std::move(v), names);
    sigma = ridge_repair(sample_cov(init.values())).cov;
    note = "initial draws from the weighted average (no Laplace approximation available)";
  }
  const Bandwidth h0 = fukunaga_bandwidth(model.dim(), n, sigma);
  const BandwidthSchedule schedule = refinement_schedule(h0, w.c.m, ms.integer("steps"));
  RefineConfig rc;
  rc.inner_iterations = ms.integer("inner_iterations");
  rc.split = ms.text("split") == "aggregate" ? BandwidthSplit::aggregate : BandwidthSplit::per_subset;
  rc.seed = seed;
  CombineResult r = weierstrass_refine(model, d, part, PriorFraction(w.c.m), init, schedule, rc,
                                       w.pool, runs);
  r.diagnostics.notes.push_back(note);
  return r;
}

CombineResult dispatch(const Workspace& w, const MethodSpec& ms, const Model& model,
                       const Dataset& d, const Partition& part, std::span<const SubsetRun> runs,
                       std::uint64_t seed) {
  const Index subset_draws = runs.front().draws.draws();
  const std::string& tag = ms.tag;
  if (tag == "simple_average") return combine_simple_average(runs);
  if (tag == "weighted_average") return combine_weighted_average(runs);
  if (tag == "kernel") return combine_kernel_marginal(runs, ms.integer("grid_points"), seed);
  if (tag == "laplace") {
    const LaplaceApprox la = laplace(model, d, PriorFraction(1));
    const Index n = ms.integer("draws") > 0 ? ms.integer("draws") : subset_draws;
    return combine_laplace(la, n, seed, model.parameter_names());
  }
  if (tag == "rejection" || tag == "rejection_direct") {
    RejectionConfig rc;
    rc.target_acceptance = ms.real("target_acceptance");
    rc.max_proposals = ms.integer("max_proposals");
    rc.pilot_size = ms.integer("pilot_size");
    rc.seed = seed;
    if (tag == "rejection") {
      rc.output_draws = ms.integer("output_draws") > 0 ? ms.integer("output_draws") : subset_draws;
      return pairwise_combine(runs, rc);
    }
    rc.output_draws = ms.integer("output_draws");
    return weierstrass_reject(runs, rc);
  }
  if (tag == "refinement") return refine_method(w, ms, model, d, part, runs, seed);
  if (tag == "sequential") {
    SequentialConfig sc;
    sc.n0 = ms.integer("n0");
    sc.replicas = ms.integer("replicas");
    sc.burnin = ms.integer("burnin");
    sc.grid_points = ms.integer("grid_points");
    sc.bandwidth_scale = ms.real("bandwidth_scale");
    sc.max_proposals = ms.integer("max_proposals");
    sc.inner_iterations = ms.integer("inner_iterations");
    sc.seed = seed;
    return sequential_reject(model, d, part, PriorFraction(w.c.m), sc, w.pool, runs);
  }
  fail(Errc::config, "unknown method tag '" + tag + "'");
}

int stage_combine(Workspace& w) {
  const auto model = make_model(w.c);
  const Dataset d = load_data(w, *model);
  const Partition part = make_partition(w, d);
  const std::vector<SubsetRun> runs = load_runs(w);
  int code = ok;
  for (const auto& ms : w.c.methods) {
    const std::uint64_t seed = w.seeds.method(ms.tag);
    const fs::path csv = w.dir / "combined" / (ms.tag + ".csv");
    const fs::path meta = w.dir / "combined" / (ms.tag + ".json");
    const auto start = Clock::now();
    json j;
    try {
      CombineResult r = dispatch(w, ms, *model, d, part, runs, seed);
      r.draws.meta().model_tag = w.c.model;
      r.draws.meta().source = "combined:" + ms.tag;
      r.draws.meta().seed_lineage = "seed=" + std::to_string(w.c.seed) + "/method=" + ms.tag +
                                    "/seed=" + std::to_string(seed);
      io::write_combined_csv(csv, r);
      record(w, csv);
      j = io::diagnostics_json(r.diagnostics);
      j["method"] = ms.tag;
      j["status"] = "ok";
      j["draws"] = r.draws.draws();
      j["weighted"] = r.weights.has_value();
      j["seed"] = seed;
      w.log << "combine: " << ms.tag << " -> " << r.draws.draws() << " draws\n";
    } catch (const Error& e) {
      if (fs::exists(csv)) {
        w.manifest["files"].erase(rel(w, csv));
        fs::remove(csv);
      }
      j = {{"method", ms.tag}, {"status", "failed"}, {"error", errc_name(e.code())},
           {"message", e.what()}, {"seed", seed}};
      w.log << "combine: " << ms.tag << " failed: " << e.what() << "\n";
      code = combine_error;
    }
    j["settings"] = ms.settings;
    io::write_json(meta, j);
    record(w, meta);
    w.manifest["methods"][rel(w, meta)] = {
        {"status", j["status"]},
        {"seconds", std::chrono::duration<double>(Clock::now() - start).count()}};
  }
  return code;
}

struct Reference {
  bool analytic = false;
  BetaParams beta{1.0, 1.0};
  double mean = 0.0, variance = 0.0;
  DrawMatrix draws;
};

Reference load_reference(const Workspace& w) {
  const fs::path meta = w.dir / "reference.json";
  Reference ref;
  if (!fs::exists(meta)) fail(Errc::io, "reference " + meta.string() + " not found");
  const json j = io::read_json(meta);
  if (j.value("kind", "") == "analytic") {
    ref.analytic = true;
    ref.beta = {j.at("a").get<double>(), j.at("b").get<double>()};
    ref.mean = j.at("mean").get<double>();
    ref.variance = j.at("variance").get<double>();
  } else {
    const fs::path csv = w.dir / "reference.csv";
    if (!fs::exists(csv)) fail(Errc::io, "reference draws " + csv.string() + " not found");
    ref.draws = io::read_draws_csv(csv);
  }
  return ref;
}

GridDensity kde_grid(std::span<const double> x, std::span<const double> wts, Index points) {
  const double h = std::max(silverman_bandwidth(x, wts), 1e-12);
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const auto grid = uniform_grid(*lo_it - 4.0 * h, *hi_it + 4.0 * h, static_cast<std::size_t>(points));
  return GridDensity(grid, kde_density(x, wts, h, grid));
}

bool wants(const ExperimentConfig& c, const char* metric) {
  return std::find(c.metrics.begin(), c.metrics.end(), metric) != c.metrics.end();
}

std::string cell(const std::optional<double>& v) { return v ? io::format_double(*v) : ""; }
std::string cell(const json& v) {
  return v.is_number() ? io::format_double(v.get<double>()) : "";
}

int stage_evaluate(Workspace& w) {
  const auto names = model_names(w.c);
  Reference ref;
  try {
    ref = load_reference(w);
  } catch (const Error& e) {
    w.log << "evaluate: " << e.what() << "\n";
    return missing_reference;
  }
  std::optional<Vec> truth;
  if (fs::exists(w.dir / "truth.json")) {
    const json t = io::read_json(w.dir / "truth.json");
    if (t.contains("true_theta") && t.at("true_theta").is_array())
      truth = io::vector_from_json(t.at("true_theta"));
  }
  constexpr Index kGrid = 512;
  const fs::path grid_dir = w.dir / "eval" / "grid";

  // reference curves for plotting
  for (std::size_t j = 0; j < names.size(); ++j) {
    const fs::path p = grid_dir / ("reference_" + names[j] + ".csv");
    if (ref.analytic) {
      const double sd = std::sqrt(ref.variance);
      const double lo = std::max(0.0, ref.mean - 8.0 * sd), hi = std::min(1.0, ref.mean + 8.0 * sd);
      const BetaParams bp = ref.beta;
      io::write_grid_csv(p, GridDensity::from_function(
                                [bp](double x) { return x <= 0.0 || x >= 1.0 ? 0.0 : std::exp(beta_log_pdf(x, bp)); },
                                lo, hi, kGrid));
    } else {
      io::write_grid_csv(p, kde_grid(ref.draws.column(static_cast<Index>(j)), {}, kGrid));
    }
    record(w, p);
  }

  io::CsvTable summary;
  summary.header = {"method", "status", "draws", "tv_mean"};
  for (const auto& n : names) summary.header.push_back("tv_" + n);
  for (const char* h : {"tv_nonzero_mean", "tv_zero_mean", "kl", "error_ratio", "acceptance_rate", "ess"})
    summary.header.push_back(h);

  int code = ok;
  for (const auto& ms : w.c.methods) {
    const fs::path meta = w.dir / "combined" / (ms.tag + ".json");
    const fs::path csv = w.dir / "combined" / (ms.tag + ".csv");
    json diag = fs::exists(meta) ? io::read_json(meta) : json{{"status", "missing"}};
    std::vector<std::string> row{ms.tag, diag.value("status", "missing")};
    if (row[1] != "ok" || !fs::exists(csv)) {
      row[1] = row[1] == "ok" ? "missing" : row[1];
      row.resize(summary.header.size());
      summary.rows.push_back(row);
      json out = {{"method", ms.tag}, {"status", row[1]}};
      io::write_json(w.dir / "eval" / (ms.tag + ".json"), out);
      record(w, w.dir / "eval" / (ms.tag + ".json"));
      code = combine_error;
      continue;
    }
    const CombineResult res = io::read_combined_csv(csv);
    std::vector<double> wts;
    if (res.weights) wts = *res.weights;
    MetricReport rep;
    if (ref.analytic) {
      const BetaParams bp = ref.beta;
      std::vector<Density1D> marg{[bp](double x) {
        return x <= 0.0 || x >= 1.0 ? 0.0 : std::exp(beta_log_pdf(x, bp));
      }};
      rep = evaluate_draws(res.draws, wts, marg);
      const Vec mean = weighted_column_mean(res.draws, wts);
      const Mat cov = wts.empty() ? sample_cov(res.draws.values()) : weighted_cov(res.draws.values(), wts);
      Vec rm(1), tm;
      rm << ref.mean;
      Mat rc(1, 1);
      rc << ref.variance;
      try {
        rep.kl = gaussian_kl(mean, cov, rm, rc);
      } catch (const Error&) {
        rep.kl.reset();
      }
      if (truth) {
        try {
          rep.error_ratio = error_ratio(mean, rm, *truth);
        } catch (const Error&) {
          rep.error_ratio.reset();
        }
      }
    } else {
      rep = evaluate_draws(res.draws, wts, ref.draws, truth);
    }
    if (!wants(w.c, "kl")) rep.kl.reset();
    if (!wants(w.c, "error_ratio")) rep.error_ratio.reset();
    json out = io::metric_json(rep, names);
    if (!wants(w.c, "tv")) {
      out.erase("tv");
      out.erase("tv_mean");
    }
    out["method"] = ms.tag;
    out["status"] = "ok";
    out["draws"] = res.draws.draws();
    out["acceptance_rate"] = diag.value("acceptance_rate", json(nullptr));
    if (ms.tag == "kernel" || ms.tag == "rejection" || ms.tag == "rejection_direct")
      out["kl_extension"] = true;
    io::write_json(w.dir / "eval" / (ms.tag + ".json"), out);
    record(w, w.dir / "eval" / (ms.tag + ".json"));

    for (Index j = 0; j < res.draws.dim(); ++j) {
      const fs::path p = grid_dir / (ms.tag + "_" + names[static_cast<std::size_t>(j)] + ".csv");
      io::write_grid_csv(p, kde_grid(res.draws.column(j), wts, kGrid));
      record(w, p);
    }

    row.push_back(std::to_string(res.draws.draws()));
    const bool tv = wants(w.c, "tv");
    row.push_back(tv ? io::format_double(rep.tv_mean) : "");
    for (double v : rep.tv) row.push_back(tv ? io::format_double(v) : "");
    row.push_back(tv ? cell(rep.tv_nonzero_mean) : "");
    row.push_back(tv ? cell(rep.tv_zero_mean) : "");
    row.push_back(cell(rep.kl));
    row.push_back(cell(rep.error_ratio));
    row.push_back(cell(out["acceptance_rate"]));
    row.push_back(cell(rep.ess));
    summary.rows.push_back(row);
    w.log << "evaluate: " << ms.tag << " tv_mean=" << rep.tv_mean << "\n";
  }
  io::write_csv(w.dir / "eval" / "summary.csv", summary);
  record(w, w.dir / "eval" / "summary.csv");
  return code;
}

// ----------------------------------------------------------------- manifest

json stage_seed_json(const Seeds& s, const std::string& stage, const ExperimentConfig& c) {
  if (stage == "generate") return {{"data", s.data}};
  if (stage == "run")
    return {{"partition", s.partition}, {"chains", s.chains}, {"reference", s.reference}};
  if (stage == "combine") {
    json j = json::object();
    for (const auto& ms : c.methods) j[ms.tag] = s.method(ms.tag);
    return j;
  }
  return json::object();
}

int run_stage(Workspace& w, const std::string& stage, int (*fn)(Workspace&), int fallback_code,
              const fs::path& manifest_path) {
  const auto start = Clock::now();
  json rec = {{"stage", stage},
              {"replicate", w.replicate},
              {"seeds", stage_seed_json(w.seeds, stage, w.c)},
              {"status", "running"}};
  int code = ok;
  try {
    code = fn(w);
  } catch (const Error& e) {
    code = exit_for(e.code(), fallback_code);
    rec["message"] = e.what();
    w.log << stage << " failed: " << e.what() << "\n";
  } catch (const std::exception& e) {
    code = fallback_code;
    rec["message"] = e.what();
    w.log << stage << " failed: " << e.what() << "\n";
  }
  rec["status"] = code == ok ? "ok" : (code == combine_error && stage == "combine" ? "partial" : "failed");
  if (code == combine_error && stage == "evaluate") rec["status"] = "partial";
  rec["exit_code"] = code;
  rec["seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  w.manifest["stages"].push_back(rec);
  io::write_json(manifest_path, w.manifest);
  return code;
}

json new_manifest(const ExperimentConfig& c, unsigned workers) {
  return {{"version", kVersion},
          {"config", to_json(c)},
          {"config_hash", io::sha256_string(canonical_text(c))},
          {"workers", workers},
          {"stages", json::array()},
          {"files", json::object()},
          {"status", "running"}};
}

std::ostream& log_stream(const RunOptions& opts) { return opts.log ? *opts.log : std::cerr; }

int single_stage(const ExperimentConfig& c, const RunOptions& opts, Index replicate,
                 const std::string& stage, int (*fn)(Workspace&), int fallback) {
  fs::create_directories(opts.out);
  const fs::path mpath = opts.out / "manifest.json";
  json manifest;
  const std::string hash = io::sha256_string(canonical_text(c));
  if (fs::exists(mpath)) {
    try {
      manifest = io::read_json(mpath);
    } catch (const Error&) {
      manifest = nullptr;
    }
  }
  if (!manifest.is_object() || manifest.value("config_hash", "") != hash)
    manifest = new_manifest(c, opts.workers);
  Workspace w{c, opts.out, opts.out, replicate, stage_seeds(c, replicate), WorkerPool(opts.workers),
              log_stream(opts), manifest};
  const int code = run_stage(w, stage, fn, fallback, mpath);
  manifest["status"] = code == ok ? "ok" : "failed";
  io::write_json(mpath, manifest);
  return code;
}

bool up_to_date(const fs::path& root, const json& manifest, const std::string& hash) {
  if (!manifest.is_object() || manifest.value("config_hash", "") != hash) return false;
  if (manifest.value("status", "") != "complete") return false;
  for (const auto& [path, sha] : manifest.at("files").items()) {
    const fs::path p = root / path;
    if (!fs::exists(p) || io::sha256_file(p) != sha.get<std::string>()) return false;
  }
  return true;
}

void write_aggregate(const ExperimentConfig& c, const fs::path& root,
                     const std::vector<fs::path>& dirs, json& manifest) {
  const std::vector<std::string> metrics{"tv_mean", "kl", "error_ratio"};
  io::CsvTable t;
  t.header = {"method", "replicates_ok"};
  for (const auto& m : metrics) {
    t.header.push_back(m + "_mean");
    t.header.push_back(m + "_sd");
  }
  for (const auto& ms : c.methods) {
    std::vector<std::vector<double>> vals(metrics.size());
    Index okays = 0;
    for (const auto& d : dirs) {
      const fs::path p = d / "eval" / (ms.tag + ".json");
      if (!fs::exists(p)) continue;
      const json j = io::read_json(p);
      if (j.value("status", "") != "ok") continue;
      ++okays;
      for (std::size_t k = 0; k < metrics.size(); ++k)
        if (j.contains(metrics[k]) && j.at(metrics[k]).is_number())
          vals[k].push_back(j.at(metrics[k]).get<double>());
    }
    std::vector<std::string> row{ms.tag, std::to_string(okays)};
    for (const auto& v : vals) {
      if (v.empty()) {
        row.insert(row.end(), {"", ""});
        continue;
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      row.push_back(io::format_double(mean));
      row.push_back(v.size() > 1 ? io::format_double(std::sqrt(ss / static_cast<double>(v.size() - 1))) : "");
    }
    t.rows.push_back(row);
  }
  io::write_csv(root / "aggregate.csv", t);
  manifest["files"]["aggregate.csv"] = io::sha256_file(root / "aggregate.csv");
}

}  // namespace

int cmd_generate(const ExperimentConfig& c, const RunOptions& opts, Index replicate) {
  return single_stage(c, opts, replicate, "generate", stage_generate, config_error);
}
int cmd_run(const ExperimentConfig& c, const RunOptions& opts, Index replicate) {
  return single_stage(c, opts, replicate, "run", stage_run, chain_error);
}
int cmd_combine(const ExperimentConfig& c, const RunOptions& opts, Index replicate) {
  return single_stage(c, opts, replicate, "combine", stage_combine, combine_error);
}
int cmd_evaluate(const ExperimentConfig& c, const RunOptions& opts, Index replicate) {
  return single_stage(c, opts, replicate, "evaluate", stage_evaluate, missing_reference);
}

int cmd_pipeline(const ExperimentConfig& c, const RunOptions& opts) {
  std::ostream& log = log_stream(opts);
  const fs::path root = opts.out;
  const fs::path mpath = root / "manifest.json";
  const std::string hash = io::sha256_string(canonical_text(c));
  if (fs::exists(mpath)) {
    json old;
    try {
      old = io::read_json(mpath);
    } catch (const Error&) {
      old = nullptr;
    }
    if (!opts.force && up_to_date(root, old, hash)) {
      log << "pipeline: outputs are up to date (config hash " << hash.substr(0, 12) << ")\n";
      return ok;
    }
    if (old.is_object() && old.contains("files"))
      for (const auto& [path, sha] : old.at("files").items()) fs::remove(root / path);
  }
  fs::create_directories(root);
  json manifest = new_manifest(c, opts.workers);
  io::write_text(root / "config.json", canonical_text(c));
  manifest["files"]["config.json"] = io::sha256_file(root / "config.json");

  std::vector<fs::path> dirs;
  int final_code = ok;
  bool aborted = false;
  for (Index r = 0; r < c.replicates && !aborted; ++r) {
    const fs::path dir = c.replicates > 1 ? root / ("rep_" + two_digits(r)) : root;
    fs::create_directories(dir);
    dirs.push_back(dir);
    Workspace w{c, root, dir, r, stage_seeds(c, r), WorkerPool(opts.workers), log, manifest};
    int code = run_stage(w, "generate", stage_generate, config_error, mpath);
    if (code == ok) code = run_stage(w, "run", stage_run, chain_error, mpath);
    if (code != ok) {
      final_code = code;
      aborted = true;
      break;
    }
    const int combine_code = run_stage(w, "combine", stage_combine, combine_error, mpath);
    if (combine_code != ok && combine_code != combine_error) {
      final_code = combine_code;
      aborted = true;
      break;
    }
    const int eval_code = run_stage(w, "evaluate", stage_evaluate, missing_reference, mpath);
    if (eval_code == missing_reference) {
      final_code = eval_code;
      aborted = true;
      break;
    }
    if (combine_code != ok && final_code == ok) final_code = combine_code;
  }
  if (!aborted) write_aggregate(c, root, dirs, manifest);
  manifest["status"] = final_code == ok ? "complete" : "failed";
  manifest["exit_code"] = final_code;
  io::write_json(mpath, manifest);
  return final_code;
}

}  // namespace wsampler::pipeline
