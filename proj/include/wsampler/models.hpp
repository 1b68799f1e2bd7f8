#pragma once

#include "wsampler/linalg.hpp"
#include "wsampler/rng.hpp"

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wsampler {

enum class Schema { logistic, mixture, bernoulli, indexed };

const char* schema_name(Schema s) noexcept;

/// Observations in columnar form. `y` carries the labels (logistic), the
/// observations (mixture), the 0/1 outcomes (bernoulli) or subset ids
/// (indexed, for analytic targets); `x` is only used by the logistic schema.
struct Dataset {
  Schema schema = Schema::bernoulli;
  Mat x;
  Vec y;

  Index n() const noexcept { return y.size(); }
  Dataset subset(std::span<const Index> rows) const;
};

/// Subset prior p_i = p^{1/m}.
struct PriorFraction {
  Index m = 1;

  explicit PriorFraction(Index m_ = 1);
  double power() const noexcept { return 1.0 / static_cast<double>(m); }
};

/// Gaussian factor exp(-1/2 (t - anchor)' precision (t - anchor)).
struct Tether {
  Vec anchor;
  Mat precision;

  double log_factor(const Vec& t) const;
};

/// Mutable per-chain state of a Gibbs sampler. Coordinates below
/// `first_free` are held fixed by `sweep`.
class GibbsKernel {
 public:
  virtual ~GibbsKernel() = default;
  virtual void initialize(const Vec& theta, Rng& rng) = 0;
  virtual void sweep(Rng& rng, const Tether* tether, Index first_free) = 0;
  virtual Vec parameters() const = 0;
  virtual void set_parameters(const Vec& theta) = 0;
};

/// A model bound to one data subset and prior fraction.
class SubsetPosterior {
 public:
  virtual ~SubsetPosterior() = default;

  virtual Index dim() const = 0;
  virtual bool has_log_density() const { return true; }
  /// Log density up to a constant; -inf outside the support.
  virtual double log_density(const Vec& theta) const = 0;
  virtual std::optional<Vec> gradient(const Vec&) const { return std::nullopt; }
  virtual std::optional<Mat> hessian(const Vec&) const { return std::nullopt; }
  virtual Vec initial_point() const = 0;

  virtual std::unique_ptr<GibbsKernel> gibbs() const { return nullptr; }

  virtual bool has_exact_sampler() const { return false; }
  virtual Vec sample_exact(Rng& rng) const;
  /// Exact draw from f_i(t) N(t | anchor, h_cov), when available.
  virtual bool has_exact_tether() const { return false; }
  virtual Vec sample_tethered(const Vec& anchor, const Mat& h_cov, Rng& rng) const;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual std::string tag() const = 0;
  virtual Schema schema() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  Index dim() const { return static_cast<Index>(parameter_names().size()); }

  /// Full-data prior, up to a constant.
  virtual double log_prior(const Vec& theta) const = 0;
  virtual bool uses_gibbs() const { return false; }
  virtual Vec prior_draw(Rng& rng) const;

  virtual std::unique_ptr<SubsetPosterior> bind(const Dataset& subset,
                                                PriorFraction fraction) const = 0;

 protected:
  void check_schema(const Dataset& d) const;
};

/// Sum of subset log-likelihood and (1/m) log prior, up to a constant.
double log_posterior(const Model& model, const Vec& theta, const Dataset& subset,
                     PriorFraction fraction);

// ------------------------------------------------------------------ logistic

/// P(y = 1 | x) = logit^{-1}(beta0 + x'beta) with N(0, prior_sd^2) priors.
/// Parameter order: beta0, beta1..betap.
class LogisticModel final : public Model {
 public:
  explicit LogisticModel(Index p, double prior_sd = 10.0);

  std::string tag() const override { return "logistic"; }
  Schema schema() const override { return Schema::logistic; }
  std::vector<std::string> parameter_names() const override;
  double log_prior(const Vec& theta) const override;
  Vec prior_draw(Rng& rng) const override;
  std::unique_ptr<SubsetPosterior> bind(const Dataset& subset,
                                        PriorFraction fraction) const override;

  Index predictors() const noexcept { return p_; }
  double prior_sd() const noexcept { return prior_sd_; }

 private:
  Index p_;
  double prior_sd_;
};

struct LogisticData {
  Dataset data;
  Vec true_beta;  // beta0, beta1..betap
};

LogisticData generate_logistic(Index n, Index p, double rho, std::uint64_t seed);

// ----------------------------------------------------------- Beta-Bernoulli

class BetaBernoulliModel final : public Model {
 public:
  explicit BetaBernoulliModel(double a = 0.01, double b = 0.01);

  std::string tag() const override { return "beta_bernoulli"; }
  Schema schema() const override { return Schema::bernoulli; }
  std::vector<std::string> parameter_names() const override { return {"theta"}; }
  double log_prior(const Vec& theta) const override;
  Vec prior_draw(Rng& rng) const override;
  std::unique_ptr<SubsetPosterior> bind(const Dataset& subset,
                                        PriorFraction fraction) const override;

  double a() const noexcept { return a_; }
  double b() const noexcept { return b_; }

 private:
  double a_, b_;
};

struct BetaParams {
  double a;
  double b;
};

struct BernoulliCounts {
  Index successes = 0;
  Index trials = 0;
};

BernoulliCounts bernoulli_counts(const Dataset& d);

/// a' = (a-1)/m + 1 + s, b' = (b-1)/m + 1 + (n - s).
BetaParams beta_posterior_params(const BetaBernoulliModel& model, BernoulliCounts counts,
                                 PriorFraction fraction);

double beta_log_pdf(double x, BetaParams p);

Dataset generate_bernoulli(Index n, double prob, std::uint64_t seed);

// ------------------------------------------------------------------ mixture

struct MixtureState {
  std::vector<int> allocations;  // 0-based component index per observation
  Vec means;
  Vec weights;
};

/// Three-component location mixture with known sd 0.5, N(2, 3^2) priors on
/// the means and Dirichlet(1,1,1) on the weights. Sampled by Gibbs sweeps
/// with no label-switching moves. Parameters are the component means.
class MixtureModel final : public Model {
 public:
  static constexpr int kComponents = 3;

  MixtureModel() = default;

  std::string tag() const override { return "mixture"; }
  Schema schema() const override { return Schema::mixture; }
  std::vector<std::string> parameter_names() const override { return {"mu1", "mu2", "mu3"}; }
  double log_prior(const Vec& means) const override;
  bool uses_gibbs() const override { return true; }
  Vec prior_draw(Rng& rng) const override;
  std::unique_ptr<SubsetPosterior> bind(const Dataset& subset,
                                        PriorFraction fraction) const override;

  double component_sd() const noexcept { return 0.5; }
  double mean_prior_mean() const noexcept { return 2.0; }
  double mean_prior_sd() const noexcept { return 3.0; }
  double dirichlet_alpha() const noexcept { return 1.0; }

  /// Log posterior of (means, weights) with allocations summed out.
  double log_joint(const Vec& means, const Vec& weights, const Dataset& subset,
                   PriorFraction fraction) const;

  /// Normal full conditional (mean, variance) of component mean `k`.
  std::pair<double, double> mean_conditional(int k, const MixtureState& state,
                                             const Dataset& subset, PriorFraction fraction,
                                             const Tether* tether) const;
  /// Dirichlet parameters of the weight full conditional.
  Vec weight_conditional(const MixtureState& state, PriorFraction fraction) const;
};

/// One Gibbs sweep: allocations, then weights, then means (means with index
/// below `first_free` stay fixed).
MixtureState mixture_gibbs_step(const MixtureModel& model, MixtureState state,
                                const Dataset& subset, PriorFraction fraction,
                                const Tether* tether, Rng& rng, Index first_free = 0);

Dataset generate_mixture(Index n, std::uint64_t seed);

// --------------------------------------------------- analytic 1-D mixtures

/// Finite mixture of univariate normals with closed-form pdf and derivatives.
struct NormalMixture1D {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> sds;

  double pdf(double x) const;
  double log_pdf(double x) const;
  double second_derivative(double x) const;
  double sample(Rng& rng) const;
  /// Exact draw from pdf(t) * N(t | anchor, h^2), normalized.
  double sample_tethered(double anchor, double h, Rng& rng) const;
};

enum class ToyDensity { p1, p2, p12 };

NormalMixture1D toy_mixture(ToyDensity which);
double toy_density(ToyDensity which, double theta);

/// Two analytic subset posteriors p1, p2 of the bimodal example. Bound via an
/// indexed dataset whose single row holds the subset id (0 or 1).
class ToyBimodalModel final : public Model {
 public:
  std::string tag() const override { return "toy_bimodal"; }
  Schema schema() const override { return Schema::indexed; }
  std::vector<std::string> parameter_names() const override { return {"theta"}; }
  double log_prior(const Vec&) const override { return 0.0; }
  std::unique_ptr<SubsetPosterior> bind(const Dataset& subset,
                                        PriorFraction fraction) const override;
};

/// Analytic Gaussian subset posteriors N(mu_i, Sigma_i), bound through an
/// indexed dataset. Used to check combiners against closed-form products.
class GaussianSubsetsModel final : public Model {
 public:
  GaussianSubsetsModel(std::vector<Vec> means, std::vector<Mat> covs);

  std::string tag() const override { return "gaussian_subsets"; }
  Schema schema() const override { return Schema::indexed; }
  std::vector<std::string> parameter_names() const override;
  double log_prior(const Vec&) const override { return 0.0; }
  std::unique_ptr<SubsetPosterior> bind(const Dataset& subset,
                                        PriorFraction fraction) const override;

  Index subsets() const noexcept { return static_cast<Index>(means_.size()); }
  const Vec& mean(Index i) const { return means_.at(static_cast<std::size_t>(i)); }
  const Mat& cov(Index i) const { return covs_.at(static_cast<std::size_t>(i)); }
  /// Moments of the normalized product of all subset densities.
  std::pair<Vec, Mat> product_moments() const;

 private:
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
};

/// Dataset with rows 0..m-1 carrying their own index, one per analytic subset.
Dataset make_indexed_dataset(Index m);

}  // namespace wsampler
