#include "wsampler/error.hpp"
#include "wsampler/io.hpp"
#include "wsampler/models.hpp"
#include "wsampler/pipeline.hpp"

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

using namespace wsampler;
namespace fs = std::filesystem;
namespace pl = wsampler::pipeline;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wsampler_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(WSAMPLER_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.in.json";
  io::write_json(p, j);
  return p;
}

json bb_config(Index m, const fs::path& out) {
  return {{"model", "beta_bernoulli"},
          {"seed", 42},
          {"m", m},
          {"data", {{"n", 2000}, {"prob", 0.1}}},
          {"chain", {{"iterations", 3000}, {"burnin", 500}}},
          {"methods", json::array({"simple_average"})},
          {"output", out.string()}};
}

std::string flags(const fs::path& cfg, const std::string& extra = "") {
  return "--config " + cfg.string() + " " + extra;
}

}  // namespace

TEST_CASE("config parsing and round trip") {
  const json doc = {{"model", "logistic"},
                    {"seed", 7},
                    {"m", 4},
                    {"data", {{"n", 500}, {"p", 3}, {"rho", 0.3}}},
                    {"methods", json::array({"simple_average", {{"tag", "rejection"}, {"target_acceptance", 0.2}},
                                             {{"tag", "refinement"}, {"steps", 5}}})}};
  const auto c = pl::parse_config(doc);
  CHECK(c.model == "logistic");
  CHECK(c.m == 4);
  CHECK(c.methods.size() == 3);
  CHECK(c.methods[1].real("target_acceptance") == 0.2);
  CHECK(c.methods[2].integer("steps") == 5);
  CHECK(c.methods[2].integer("inner_iterations") == 100);
  const json canon = pl::to_json(c);
  CHECK(pl::to_json(pl::parse_config(canon)) == canon);
  CHECK(pl::canonical_text(pl::parse_config(canon)) == pl::canonical_text(c));

  auto bad = [&](json j) {
    try {
      pl::parse_config(j);
    } catch (const Error& e) {
      return e.code() == Errc::config;
    }
    return false;
  };
  json j = doc;
  j["colour"] = "red";
  CHECK(bad(j));
  j = doc;
  j.erase("seed");
  CHECK(bad(j));
  j = doc;
  j["methods"] = json::array({"bogus"});
  CHECK(bad(j));
  j = doc;
  j["methods"] = json::array({{{"tag", "kernel"}, {"grid_size", 3}}});
  CHECK(bad(j));
  j = doc;
  j["model"] = "probit";
  CHECK(bad(j));
  j = doc;
  j["data"]["path"] = "/nonexistent/data.csv";
  CHECK(bad(j));
  j = doc;
  j["methods"] = json::array({"kernel", "kernel"});
  CHECK(bad(j));
  j = doc;
  j["reference"] = {{"kind", "analytic"}};
  CHECK(bad(j));
}

TEST_CASE("stage seeds are distinct and replicate dependent") {
  const auto c = pl::parse_config(json{{"model", "beta_bernoulli"}, {"seed", 1}, {"m", 2}, {"methods", {"kernel"}}});
  const auto s0 = pl::stage_seeds(c, 0), s1 = pl::stage_seeds(c, 1);
  CHECK(s0.data != s1.data);
  CHECK(s0.partition != s0.chains);
  CHECK(s0.method("kernel") != s0.method("rejection"));
  CHECK(s0.method("kernel") == pl::stage_seeds(c, 0).method("kernel"));
}

TEST_CASE("cli exit codes for bad invocations") {
  const fs::path d = scratch("bad");
  CHECK(cli("--version") == 0);
  CHECK(cli("pipeline") == 2);
  CHECK(cli(flags(d / "missing.json", "pipeline")) == 2);
  json j = bb_config(2, d / "out");
  j["extra_key"] = 1;
  CHECK(cli(flags(write_config(d, j), "pipeline")) == 2);
  j = bb_config(2, d / "out");
  j.erase("seed");
  CHECK(cli(flags(write_config(d, j), "pipeline")) == 2);
  CHECK(cli(flags(write_config(d, bb_config(2, d / "out")), "frobnicate")) == 2);
}

TEST_CASE("generate writes data and truth deterministically") {
  const fs::path d = scratch("gen");
  json j = {{"model", "logistic"}, {"seed", 42}, {"m", 5}, {"data", {{"n", 5000}, {"p", 5}, {"rho", 0.0}}}, {"methods", {"simple_average"}}};
  const fs::path cfg = write_config(d, j);
  REQUIRE(cli(flags(cfg, "--out " + (d / "a").string() + " generate")) == 0);
  REQUIRE(cli(flags(cfg, "--out " + (d / "b").string() + " generate")) == 0);
  const auto t = io::read_csv(d / "a" / "data.csv");
  CHECK(t.rows.size() == 5000);
  CHECK(t.header.size() == 6);
  CHECK(t.header[0] == "y");
  CHECK(fs::exists(d / "a" / "truth.json"));
  const json truth = io::read_json(d / "a" / "truth.json");
  CHECK(truth.at("true_theta").size() == 6);
  CHECK(io::sha256_file(d / "a" / "data.csv") == io::sha256_file(d / "b" / "data.csv"));
  CHECK(io::sha256_file(d / "a" / "truth.json") == io::sha256_file(d / "b" / "truth.json"));

  json mj = {{"model", "mixture"}, {"seed", 3}, {"m", 5}, {"data", {{"n", 2000}}}, {"methods", {"simple_average"}}};
  REQUIRE(cli(flags(write_config(d, mj), "--out " + (d / "mix").string() + " generate")) == 0);
  const auto mt = io::read_csv(d / "mix" / "data.csv");
  CHECK(mt.header == std::vector<std::string>{"x"});
  double s = 0.0;
  for (const auto& r : mt.rows) s += io::parse_double(r[0]);
  CHECK(std::abs(s / mt.rows.size() - 1.5) <= 0.1);

  // Read-back of a generated dataset.
  const Dataset back = io::read_dataset_csv(d / "a" / "data.csv", Schema::logistic);
  CHECK(back.n() == 5000);
  CHECK(back.x.cols() == 5);
}

TEST_CASE("run writes one draw file per subset") {
  const fs::path d = scratch("run");
  const fs::path cfg = write_config(d, bb_config(20, d / "out"));
  REQUIRE(cli(flags(cfg, "generate")) == 0);
  REQUIRE(cli(flags(cfg, "--workers 2 run")) == 0);
  const fs::path sub = d / "out" / "subsets";
  const Dataset data = io::read_dataset_csv(d / "out" / "data.csv", Schema::bernoulli);
  const auto part = io::read_csv(sub / "partition.csv");
  REQUIRE(part.rows.size() == 2000);
  std::vector<std::vector<Index>> rows(20);
  for (const auto& r : part.rows)
    rows[static_cast<std::size_t>(std::stoll(r[1]) - 1)].push_back(std::stoll(r[0]));
  const BetaBernoulliModel model;
  for (int i = 1; i <= 20; ++i) {
    const std::string id = (i < 10 ? "0" : "") + std::to_string(i);
    REQUIRE(fs::exists(sub / ("subset_" + id + ".csv")));
    REQUIRE(fs::exists(sub / ("subset_" + id + ".json")));
    const DrawMatrix dm = io::read_draws_csv(sub / ("subset_" + id + ".csv"));
    const auto& rr = rows[static_cast<std::size_t>(i - 1)];
    const auto p = beta_posterior_params(model, bernoulli_counts(data.subset(rr)), PriorFraction(20));
    const double mean = p.a / (p.a + p.b);
    const double sd = std::sqrt(mean * (1 - mean) / (p.a + p.b + 1));
    CHECK(std::abs(dm.values().col(0).mean() - mean) <= 4 * sd);
  }

  const fs::path d8 = scratch("run8");
  const fs::path cfg8 = write_config(d8, bb_config(20, d8 / "out"));
  REQUIRE(cli(flags(cfg8, "generate")) == 0);
  REQUIRE(cli(flags(cfg8, "--workers 8 run")) == 0);
  for (const char* f : {"subset_01.csv", "subset_07.csv", "subset_20.csv", "partition.csv"})
    CHECK(io::sha256_file(sub / f) == io::sha256_file(d8 / "out" / "subsets" / f));
}

TEST_CASE("combine and evaluate") {
  const fs::path d = scratch("comb");
  json j = bb_config(1, d / "one");
  const fs::path cfg = write_config(d, j);
  REQUIRE(cli(flags(cfg, "generate")) == 0);
  CHECK(cli(flags(cfg, "evaluate")) == 5);
  const json failed = io::read_json(d / "one" / "manifest.json");
  CHECK(failed.at("stages").back().at("status") == "failed");
  REQUIRE(cli(flags(cfg, "run")) == 0);
  REQUIRE(cli(flags(cfg, "combine")) == 0);
  const DrawMatrix in = io::read_draws_csv(d / "one" / "subsets" / "subset_01.csv");
  const auto out = io::read_combined_csv(d / "one" / "combined" / "simple_average.csv");
  CHECK(out.draws.values() == in.values());

  const fs::path d2 = scratch("comb5");
  json five = bb_config(2, d2 / "out");
  five["methods"] = json::array({"simple_average", "weighted_average", "kernel", "laplace",
                                 {{"tag", "rejection_direct"}, {"target_acceptance", 0.1}}});
  const fs::path cfg5 = write_config(d2, five);
  REQUIRE(cli(flags(cfg5, "pipeline")) == 0);
  const json man = io::read_json(d2 / "out" / "manifest.json");
  CHECK(man.at("status") == "complete");
  for (const std::string tag : {"simple_average", "weighted_average", "kernel", "laplace", "rejection_direct"}) {
    CHECK(fs::exists(d2 / "out" / "combined" / (tag + ".csv")));
    CHECK(man.at("files").contains("combined/" + tag + ".csv"));
    CHECK(man.at("files").contains("eval/" + tag + ".json"));
  }
  const json rej = io::read_json(d2 / "out" / "combined" / "rejection_direct.json");
  const double ar = rej.at("acceptance_rate").get<double>();
  CHECK(ar >= 0.09);
  CHECK(ar <= 0.11);
  const auto summary = io::read_csv(d2 / "out" / "eval" / "summary.csv");
  CHECK(summary.rows.size() == 5);
  CHECK(summary.header[0] == "method");
  for (const auto& [path, sha] : man.at("files").items()) CHECK(io::sha256_file(d2 / "out" / path) == sha.get<std::string>());
  CHECK(fs::exists(d2 / "out" / "eval" / "grid" / "reference_theta.csv"));
}

TEST_CASE("combiner failure gives exit 4 and keeps other methods") {
  const fs::path d = scratch("fail");
  json j = bb_config(4, d / "out");
  j["methods"] = json::array({"simple_average", {{"tag", "rejection_direct"}, {"max_proposals", 1}, {"target_acceptance", 1e-6}}});
  CHECK(cli(flags(write_config(d, j), "pipeline")) == 4);
  const json man = io::read_json(d / "out" / "manifest.json");
  CHECK(man.at("status") == "failed");
  bool partial = false;
  for (const auto& s : man.at("stages"))
    if (s.at("stage") == "combine") partial = s.at("status") == "partial";
  CHECK(partial);
  CHECK(fs::exists(d / "out" / "combined" / "simple_average.csv"));
  CHECK(io::read_json(d / "out" / "combined" / "rejection_direct.json").at("status") == "failed");
}

TEST_CASE("pipeline replicates and idempotence") {
  const fs::path d = scratch("pipe");
  json j = bb_config(4, d / "out");
  j["replicates"] = 3;
  j["methods"] = json::array({"simple_average", "kernel"});
  const fs::path cfg = write_config(d, j);
  REQUIRE(cli(flags(cfg, "pipeline")) == 0);
  const auto agg = io::read_csv(d / "out" / "aggregate.csv");
  CHECK(agg.rows.size() == 2);
  CHECK(agg.rows[0][1] == "3");
  for (const char* r : {"rep_00", "rep_01", "rep_02"}) CHECK(fs::exists(d / "out" / r / "eval" / "summary.csv"));

  const auto stamp = fs::last_write_time(d / "out" / "rep_00" / "data.csv");
  const std::string before = io::read_text(d / "out" / "manifest.json");
  REQUIRE(cli(flags(cfg, "pipeline")) == 0);
  CHECK(io::read_text(d / "out" / "manifest.json") == before);
  CHECK(fs::last_write_time(d / "out" / "rep_00" / "data.csv") == stamp);

  const std::string hash = io::sha256_file(d / "out" / "rep_01" / "combined" / "kernel.csv");
  REQUIRE(cli(flags(cfg, "--force pipeline")) == 0);
  CHECK(io::sha256_file(d / "out" / "rep_01" / "combined" / "kernel.csv") == hash);
  CHECK(io::read_text(d / "out" / "manifest.json") != before);

  // A changed seed invalidates the outputs.
  REQUIRE(cli(flags(cfg, "--seed 43 pipeline")) == 0);
  CHECK(io::sha256_file(d / "out" / "rep_01" / "combined" / "kernel.csv") != hash);
}

TEST_CASE("library pipeline matches the cli") {
  const fs::path d = scratch("lib");
  const json j = bb_config(2, d / "cli");
  REQUIRE(cli(flags(write_config(d, j), "pipeline")) == 0);
  auto c = pl::parse_config(j);
  c.output = (d / "lib").string();
  pl::RunOptions opts;
  opts.out = c.output;
  std::ostringstream log;
  opts.log = &log;
  REQUIRE(pl::cmd_pipeline(c, opts) == 0);
  for (const char* f : {"data.csv", "subsets/subset_02.csv", "combined/simple_average.csv", "eval/summary.csv"})
    CHECK(io::sha256_file(d / "cli" / f) == io::sha256_file(d / "lib" / f));
}
