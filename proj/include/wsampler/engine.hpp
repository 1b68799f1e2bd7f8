#pragma once

#include "wsampler/draws.hpp"
#include "wsampler/kernel.hpp"
#include "wsampler/models.hpp"
#include "wsampler/parallel.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace wsampler {

/// Balanced random split of n rows into m blocks. Ids are 0-based here and
/// 1-based in file names.
struct Partition {
  Index m = 0;
  std::uint64_t seed = 0;
  std::vector<Index> assignment;            // subset id per row
  std::vector<std::vector<Index>> members;  // sorted rows per subset

  Index n() const noexcept { return static_cast<Index>(assignment.size()); }
  Dataset subset(const Dataset& data, Index id) const;
};

Partition partition(Index n, Index m, std::uint64_t seed);
Partition partition(const Dataset& data, Index m, std::uint64_t seed);

enum class Proposal { adaptive_rw, gibbs, exact };

const char* proposal_name(Proposal p) noexcept;

struct ChainConfig {
  Index iterations = 12000;  // including burn-in
  Index burnin = 2000;
  Index thin = 1;
  std::uint64_t seed = 0;
  /// Starting point; unset means the Laplace mode when available, otherwise
  /// the model's default initial point.
  std::optional<Vec> initial;
  Proposal proposal = Proposal::adaptive_rw;
  double adapt_target = 0.30;

  void validate() const;
  Index retained() const { return (iterations - burnin) / thin; }
};

struct LaplaceApprox {
  Vec mode;
  Mat cov;       // inverse of the negative Hessian at the mode
  double log_det = 0.0;
  Index iterations = 0;
};

/// Newton's method with backtracking on the subset log density; stops when
/// the Newton decrement falls below 1e-6 or after `max_iterations`.
LaplaceApprox laplace(const SubsetPosterior& post, std::optional<Vec> start = std::nullopt,
                      Index max_iterations = 200);
LaplaceApprox laplace(const Model& model, const Dataset& data, PriorFraction fraction);

struct SubsetRun {
  Index subset_id = 0;
  DrawMatrix draws;
  std::optional<LaplaceApprox> laplace;
  Vec sample_mean;
  Mat sample_cov;
  bool cov_repaired = false;
  double acceptance_rate = 1.0;
  double proposal_scale = 0.0;  // final adapted random-walk scale, 0 for Gibbs/exact
};

/// Recomputes the sample moments of `run.draws` (ridge-repairing the covariance).
void refresh_moments(SubsetRun& run);

/// Builds a SubsetRun from externally produced draws.
SubsetRun make_subset_run(Index subset_id, DrawMatrix draws);

SubsetRun run_chain(const Model& model, const Dataset& subset, PriorFraction fraction,
                    const ChainConfig& config, Index subset_id = 0);

/// One run_chain per subset on the pool; subset i uses the stream keyed by
/// (config.seed, i). Output does not depend on the worker count.
std::vector<SubsetRun> run_all_subsets(const Model& model, const Dataset& data,
                                       const Partition& part, PriorFraction fraction,
                                       const ChainConfig& config, const WorkerPool& pool);

// ------------------------------------------------------------- Metropolis

struct MetropolisResult {
  Vec state;
  double log_density = 0.0;
  Index accepted = 0;
};

/// Fixed-proposal random-walk Metropolis on log f(t) + tether(t). `proposal_chol`
/// is the lower Cholesky factor of the proposal covariance.
MetropolisResult metropolis(const SubsetPosterior& post, const Tether* tether, const Vec& init,
                            const Mat& proposal_chol, Index iterations, Rng& rng);

// -------------------------------------------------------- tethered chains

/// Draws from f_i(t) N(t | anchor, H) for one subset. Uses the subset's exact
/// tethered sampler when it has one, Gibbs sweeps for Gibbs models, and
/// otherwise a random-walk Metropolis chain whose proposal covariance is
/// (2.38^2/d) (Sigma_i^{-1} + H^{-1})^{-1}, with Sigma_i the subset posterior
/// covariance.
class TetheredSampler {
 public:
  TetheredSampler(std::unique_ptr<SubsetPosterior> post, const Mat& subset_cov,
                  bool allow_exact = true);

  const SubsetPosterior& posterior() const noexcept { return *post_; }
  Vec run(const Vec& anchor, const Bandwidth& h, Index iterations, const Vec& init,
          Rng& rng) const;

 private:
  std::unique_ptr<SubsetPosterior> post_;
  Mat subset_precision_;
  bool exact_;
  bool gibbs_;
};

Vec tethered_chain(const Model& model, const Dataset& subset, PriorFraction fraction,
                   const Vec& anchor, const Bandwidth& h, Index iterations, const Vec& init,
                   std::uint64_t seed, std::optional<Mat> subset_cov = std::nullopt);

}  // namespace wsampler
