#pragma once

#include "wsampler/draws.hpp"
#include "wsampler/engine.hpp"
#include "wsampler/kernel.hpp"
#include "wsampler/parallel.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wsampler {

struct CombineDiagnostics {
  std::string method;
  std::optional<double> acceptance_rate;
  Index proposals = 0;
  Index accepted = 0;
  double bandwidth_multiplier = 0.0;
  bool saturated = false;
  std::vector<std::vector<double>> bandwidths;  // per subset, per coordinate (sd units)
  // Pairwise tree: one entry per level. Refinement: one entry per step.
  std::vector<double> level_acceptance;
  std::vector<Index> level_draws;
  std::vector<double> schedule;    // refinement multipliers actually used
  std::vector<double> step_trace;  // optional per-step metric
  std::vector<std::vector<double>> log_c;  // sequential: per replica, log C_0..C_{p-1}
  Index failed_replicas = 0;
  std::optional<double> ess;
  std::vector<std::string> notes;
};

struct CombineResult {
  DrawMatrix draws;
  std::optional<std::vector<double>> weights;  // self-normalized
  CombineDiagnostics diagnostics;
  std::vector<Mat> step_draws;  // refinement with keep_step_draws
};

// ------------------------------------------------------------- baselines

CombineResult combine_simple_average(std::span<const SubsetRun> runs);

/// w_i = (sum_k S_k^{-1})^{-1} S_i^{-1} with S_i the subset sample covariance.
CombineResult combine_weighted_average(std::span<const SubsetRun> runs);

/// Per-coordinate product of 1-D Silverman KDEs, drawn by inverse CDF.
/// Coordinates are drawn independently of each other.
CombineResult combine_kernel_marginal(std::span<const SubsetRun> runs, Index grid_points = 2048,
                                      std::uint64_t seed = 0);

/// Draws from N(mode, cov).
DrawMatrix gaussian_draws(const Vec& mean, const Mat& cov, Index n, std::uint64_t seed,
                          std::vector<std::string> names, DrawMeta meta = {});

CombineResult combine_laplace(const LaplaceApprox& approx, Index n, std::uint64_t seed,
                              std::vector<std::string> names);

// ------------------------------------------------------------ refinement

/// How a schedule value maps to the per-subset kernel covariance H_i.
/// `per_subset`: H_i = multiplier_s * H0. `aggregate`: H_i = m * multiplier_s * H0,
/// so that (sum_i H_i^{-1})^{-1} equals the schedule value.
enum class BandwidthSplit { per_subset, aggregate };

struct RefineConfig {
  Index inner_iterations = 100;
  BandwidthSplit split = BandwidthSplit::per_subset;
  std::uint64_t seed = 0;
  bool keep_step_draws = false;
  /// Evaluated on the current draws after every step; results go to step_trace.
  std::function<double(const Mat&)> step_metric;
};

/// Refinement Gibbs sampler: each step redraws t_i ~ f_i(t) N(t | theta, H_i)
/// for every draw and subset (warm-started at the previous t_i), then
/// theta ~ N(cov * sum H_i^{-1} t_i, cov = (sum H_i^{-1})^{-1}).
/// `runs`, when present, supplies subset covariances for the tethered proposals.
CombineResult weierstrass_refine(const Model& model, const Dataset& data, const Partition& part,
                                 PriorFraction fraction, const DrawMatrix& init,
                                 const BandwidthSchedule& schedule, const RefineConfig& config,
                                 const WorkerPool& pool, std::span<const SubsetRun> runs = {});

// ------------------------------------------------------------- rejection

struct RejectionConfig {
  /// Exactly one of these is used: a target acceptance rate for calibration,
  /// or explicit per-subset per-coordinate kernel sds.
  std::optional<double> target_acceptance = 0.1;
  std::vector<Vec> bandwidths;
  Index max_proposals = 2'000'000;
  /// 0: one pass over aligned tuples (the k-th draw of every subset).
  /// Otherwise: random tuples until this many acceptances.
  Index output_draws = 0;
  std::uint64_t seed = 0;
  Index pilot_size = 2000;
  Index min_level_draws = 200;

  void validate() const;
};

struct Calibration {
  std::vector<Vec> bandwidths;
  double multiplier = 1.0;
  double pilot_acceptance = 0.0;
  bool saturated = false;
  int steps = 0;
};

/// Mean acceptance probability (averaged over donors) on random tuples.
double pilot_acceptance(std::span<const Mat> sets, std::span<const Vec> bandwidths,
                        Index pilot_size, std::uint64_t seed,
                        const KernelSpec& spec = KernelSpec::gaussian());

/// Common multiplier on per-subset per-coordinate Silverman scales, bisected
/// on log scale over [1e-6, 1e3] until the pilot acceptance is within 1% of
/// the target (or 40 steps).
Calibration calibrate_bandwidth(std::span<const Mat> sets, double target_acceptance,
                                Index pilot_size = 2000, std::uint64_t seed = 0,
                                const KernelSpec& spec = KernelSpec::gaussian());
Calibration calibrate_bandwidth(std::span<const SubsetRun> runs, double target_acceptance,
                                const KernelSpec& spec = KernelSpec::gaussian());

/// Log acceptance probability of donor `donor` in a tuple of draws (one row per subset).
double log_acceptance(const Mat& tuple, Index donor, std::span<const Vec> bandwidths,
                      const KernelSpec& spec = KernelSpec::gaussian());

CombineResult weierstrass_reject(std::span<const Mat> sets, const RejectionConfig& config,
                                 const KernelSpec& spec = KernelSpec::gaussian(),
                                 std::vector<std::string> names = {});
CombineResult weierstrass_reject(std::span<const SubsetRun> runs, const RejectionConfig& config,
                                 const KernelSpec& spec = KernelSpec::gaussian());

/// Balanced binary tree of pairwise rejections; an odd node is promoted as is.
CombineResult pairwise_combine(std::span<const SubsetRun> runs, const RejectionConfig& config,
                               const KernelSpec& spec = KernelSpec::gaussian());

// ------------------------------------------------------------ sequential

struct SequentialConfig {
  Index n0 = 500;         // retained draws per coordinate per subset
  Index burnin = 100;     // per coordinate, after pinning the previous one
  Index replicas = 200;
  Index grid_points = 512;
  /// Kernel sd for every subset: sqrt(m) * h_j with h_j = scale * s_j / sqrt(m),
  /// s_j the mean Silverman bandwidth of the subsets' conditional draws.
  double bandwidth_scale = 1.0;
  Index max_proposals = 200'000;
  Index inner_iterations = 1;  // Metropolis steps per retained draw
  std::uint64_t seed = 0;

  void validate() const;
};

/// log C = log of the integral of prod_i fhat_i, with fhat_i a Silverman KDE
/// of each subset's conditional draws.
double conditional_log_weight(std::span<const std::span<const double>> draws,
                              Index grid_points = 512);
double conditional_weight(std::span<const std::span<const double>> draws,
                          Index grid_points = 512);

/// Sequential rejection: one coordinate at a time, each conditional on the
/// accepted values of the earlier ones, with importance weights prod_j C_j.
/// Each replica starts every subset chain from a common point: a random draw
/// of a random subset run when `runs` is given, else a prior draw.
CombineResult sequential_reject(const Model& model, const Dataset& data, const Partition& part,
                                PriorFraction fraction, const SequentialConfig& config,
                                const WorkerPool& pool, std::span<const SubsetRun> runs = {});

}  // namespace wsampler
