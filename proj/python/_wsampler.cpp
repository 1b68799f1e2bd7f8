#include "wsampler/combiners.hpp"
#include "wsampler/engine.hpp"
#include "wsampler/error.hpp"
#include "wsampler/evaluation.hpp"
#include "wsampler/kde.hpp"
#include "wsampler/kernel.hpp"
#include "wsampler/models.hpp"
#include "wsampler/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace wsampler;

namespace {

std::vector<std::string> default_names(Index p) {
  std::vector<std::string> n;
  for (Index j = 0; j < p; ++j) n.push_back("theta" + std::to_string(j + 1));
  return n;
}

std::vector<SubsetRun> as_runs(const std::vector<Mat>& draws) {
  if (draws.empty()) throw py::value_error("need at least one draw matrix");
  std::vector<SubsetRun> runs;
  for (std::size_t i = 0; i < draws.size(); ++i)
    runs.push_back(make_subset_run(static_cast<Index>(i),
                                   DrawMatrix(draws[i], default_names(draws[i].cols()))));
  return runs;
}

py::dict diagnostics_dict(const CombineDiagnostics& d) {
  py::dict out;
  out["method"] = d.method;
  out["acceptance_rate"] = d.acceptance_rate;
  out["proposals"] = d.proposals;
  out["accepted"] = d.accepted;
  out["level_acceptance"] = d.level_acceptance;
  out["level_draws"] = d.level_draws;
  out["saturated"] = d.saturated;
  out["ess"] = d.ess;
  out["notes"] = d.notes;
  return out;
}

py::tuple result_tuple(const CombineResult& r) {
  py::object w = py::none();
  if (r.weights) w = py::cast(*r.weights);
  return py::make_tuple(r.draws.values(), w, diagnostics_dict(r.diagnostics));
}

std::unique_ptr<Model> model_for(const std::string& tag, Index p) {
  if (tag == "beta_bernoulli") return std::make_unique<BetaBernoulliModel>();
  if (tag == "logistic") return std::make_unique<LogisticModel>(p);
  if (tag == "mixture") return std::make_unique<MixtureModel>();
  throw py::value_error("unknown model tag '" + tag + "'");
}

Dataset dataset_for(const Model& model, const Vec& y, const std::optional<Mat>& x) {
  Dataset d;
  d.schema = model.schema();
  d.y = y;
  if (model.schema() == Schema::logistic) {
    if (!x) throw py::value_error("logistic model needs a design matrix x");
    d.x = *x;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_wsampler, m) {
  m.doc() = "Subset posterior sampling and combination";
  py::register_exception<Error>(m, "WsamplerError", PyExc_RuntimeError);

  m.def("generate_logistic", [](Index n, Index p, double rho, std::uint64_t seed) {
        auto g = generate_logistic(n, p, rho, seed);
        return py::make_tuple(g.data.x, g.data.y, g.true_beta);
      }, py::arg("n"), py::arg("p"), py::arg("rho"), py::arg("seed"),
      "Returns (x, y, true_beta) with beta0 first.");
  m.def("generate_bernoulli", [](Index n, double prob, std::uint64_t seed) {
        return generate_bernoulli(n, prob, seed).y;
      }, py::arg("n"), py::arg("prob"), py::arg("seed"));
  m.def("generate_mixture", [](Index n, std::uint64_t seed) { return generate_mixture(n, seed).y; },
        py::arg("n"), py::arg("seed"));

  m.def("partition", [](Index n, Index m_, std::uint64_t seed) { return partition(n, m_, seed).assignment; },
        py::arg("n"), py::arg("m"), py::arg("seed"), "Subset id (0-based) of every row.");

  m.def("run_subsets",
        [](const std::string& model_tag, const Vec& y, std::optional<Mat> x, Index m_,
           std::uint64_t seed, Index iterations, Index burnin, unsigned workers) {
          const auto model = model_for(model_tag, x ? x->cols() : 0);
          const Dataset d = dataset_for(*model, y, x);
          const Partition part = partition(d, m_, seed);
          ChainConfig cc;
          cc.iterations = iterations;
          cc.burnin = burnin;
          cc.seed = seed;
          cc.proposal = model_tag == "mixture" ? Proposal::gibbs : Proposal::adaptive_rw;
          std::vector<SubsetRun> runs;
          {
            py::gil_scoped_release release;
            runs = run_all_subsets(*model, d, part, PriorFraction(m_), cc, WorkerPool(workers));
          }
          std::vector<Mat> out;
          for (const auto& r : runs) out.push_back(r.draws.values());
          return out;
        },
        py::arg("model"), py::arg("y"), py::arg("x") = py::none(), py::arg("m"), py::arg("seed"),
        py::arg("iterations") = 12000, py::arg("burnin") = 2000, py::arg("workers") = 1,
        "Partitions the data and returns one draw matrix per subset.");

  m.def("combine",
        [](const std::string& method, const std::vector<Mat>& draws, std::uint64_t seed,
           double target_acceptance, Index output_draws) {
          const auto runs = as_runs(draws);
          if (method == "simple_average") return result_tuple(combine_simple_average(runs));
          if (method == "weighted_average") return result_tuple(combine_weighted_average(runs));
          if (method == "kernel") return result_tuple(combine_kernel_marginal(runs, 2048, seed));
          RejectionConfig rc;
          rc.target_acceptance = target_acceptance;
          rc.seed = seed;
          rc.output_draws = output_draws;
          if (method == "rejection") {
            if (rc.output_draws == 0) rc.output_draws = runs.front().draws.draws();
            return result_tuple(pairwise_combine(runs, rc));
          }
          if (method == "rejection_direct") return result_tuple(weierstrass_reject(runs, rc));
          throw py::value_error("unknown method '" + method + "'");
        },
        py::arg("method"), py::arg("draws"), py::arg("seed") = 0, py::arg("target_acceptance") = 0.1,
        py::arg("output_draws") = 0, "Returns (draws, weights or None, diagnostics).");

  m.def("tv_distance",
        [](const std::vector<double>& a, const std::vector<double>& b, std::vector<double> wa,
           std::vector<double> wb, Index grid_points) { return tv_distance(a, wa, b, wb, grid_points); },
        py::arg("a"), py::arg("b"), py::arg("wa") = std::vector<double>{},
        py::arg("wb") = std::vector<double>{}, py::arg("grid_points") = 2048);
  m.def("gaussian_kl",
        [](const Mat& approx, const Mat& reference, std::vector<double> weights) {
          return gaussian_kl(approx, weights, reference);
        },
        py::arg("approx"), py::arg("reference"), py::arg("weights") = std::vector<double>{});
  m.def("weierstrass_transform",
        [](std::vector<double> grid, std::vector<double> values, double h) {
          return weierstrass_transform(GridDensity(std::move(grid), std::move(values)), h).values();
        },
        py::arg("grid"), py::arg("values"), py::arg("h"));
  m.def("fukunaga_bandwidth",
        [](Index p, Index n, const Mat& sigma) { return fukunaga_bandwidth(p, n, sigma).covariance(); },
        py::arg("p"), py::arg("n"), py::arg("sigma"));
  m.def("conditional_weight",
        [](const std::vector<std::vector<double>>& draws, Index grid_points) {
          std::vector<std::span<const double>> views(draws.begin(), draws.end());
          return conditional_weight(views, grid_points);
        },
        py::arg("draws"), py::arg("grid_points") = 512);

  m.def("run_pipeline",
        [](const std::string& config_json, const std::string& out, unsigned workers, bool force) {
          auto cfg = pipeline::parse_config(nlohmann::json::parse(config_json));
          pipeline::RunOptions opts;
          opts.out = out.empty() ? cfg.output : out;
          opts.workers = workers;
          opts.force = force;
          py::gil_scoped_release release;
          return pipeline::cmd_pipeline(cfg, opts);
        },
        py::arg("config_json"), py::arg("out") = "", py::arg("workers") = 1, py::arg("force") = false,
        "Runs the full pipeline from a JSON config string; returns the exit code.");
  m.attr("__version__") = pipeline::kVersion;
}
