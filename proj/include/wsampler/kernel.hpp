#pragma once

#include "wsampler/linalg.hpp"
#include "wsampler/rng.hpp"

#include <functional>
#include <span>
#include <vector>

namespace wsampler {

enum class KernelFamily { gaussian };

/// A second-order smoothing kernel K with its sup and second moment. Only
/// the Gaussian family is provided.
struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  int order = 2;
  double sup_value = 0.3989422804014327;  // (2 pi)^{-1/2}
  double second_moment = 1.0;

  static KernelSpec gaussian() { return KernelSpec{}; }
  double log_sup() const;
};

double kernel_eval(const KernelSpec& spec, double u);
double kernel_log_eval(const KernelSpec& spec, double u);

/// Kernel covariance for one subset. The scalar and diagonal forms take
/// standard deviations (h, or h_j per coordinate); the full form takes the
/// covariance H itself. Internally everything is stored as a covariance.
class Bandwidth {
 public:
  enum class Form { scalar, diagonal, full };

  static Bandwidth scalar(double h, Index dim = 1);
  static Bandwidth diagonal(const Vec& h);
  static Bandwidth full(const Mat& cov);

  Form form() const noexcept { return form_; }
  Index dim() const noexcept { return cov_.rows(); }
  const Mat& covariance() const noexcept { return cov_; }
  Mat precision() const;
  /// Per-coordinate standard deviations, sqrt(diag H).
  Vec sd() const;
  double scalar_h() const;

  /// Covariance multiplied by `factor` (so h scales by sqrt(factor)).
  Bandwidth scaled(double factor) const;

 private:
  Bandwidth(Form form, Mat cov) : form_(form), cov_(std::move(cov)) {}
  Form form_;
  Mat cov_;
};

/// Per-step multipliers applied to a base covariance H0.
class BandwidthSchedule {
 public:
  BandwidthSchedule(Bandwidth base, std::vector<double> multipliers);

  const Bandwidth& base() const noexcept { return base_; }
  const std::vector<double>& multipliers() const noexcept { return multipliers_; }
  std::size_t steps() const noexcept { return multipliers_.size(); }
  Bandwidth at(std::size_t step) const { return base_.scaled(multipliers_.at(step)); }

 private:
  Bandwidth base_;
  std::vector<double> multipliers_;
};

/// Density tabulated on a strictly increasing grid, normalized to unit
/// trapezoid mass on construction.
class GridDensity {
 public:
  GridDensity(std::vector<double> grid, std::vector<double> values, bool normalize = true);

  static GridDensity from_function(const std::function<double(double)>& f, double lo, double hi,
                                   std::size_t points, bool normalize = true);

  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return grid_.size(); }

  double integral() const;
  double mean() const;
  double variance() const;
  /// Linear interpolation, zero outside the grid.
  double value_at(double x) const;
  double max_abs_difference(const GridDensity& other) const;
  /// Inverse-CDF draw from the piecewise-linear density.
  double sample(Rng& rng) const;

 private:
  std::vector<double> grid_;
  std::vector<double> values_;
  mutable std::vector<double> cdf_;
};

double trapezoid(std::span<const double> x, std::span<const double> y);

/// W_h f: exact convolution of the piecewise-linear interpolant of f with
/// K_h, evaluated on f's own grid and renormalized. Throws grid_too_narrow
/// when more than 1e-4 of the transformed mass leaves the grid.
GridDensity weierstrass_transform(const GridDensity& f, double h,
                                  const KernelSpec& spec = KernelSpec::gaussian());

/// H0 = ((p+2)/4)^{-2/(p+4)} N^{-2/(p+4)} Sigma.
Bandwidth fukunaga_bandwidth(Index p, Index n, const Mat& sigma_hat);

/// m, 1, 1/m phases in a 30/50/20 split of `steps` (3/5/2 for ten steps).
BandwidthSchedule refinement_schedule(const Bandwidth& h0, Index m, Index steps);

struct GaussianMoments {
  Vec mean;
  Mat cov;
};

/// Conditional of theta given t_1..t_m under the joint Gaussian-kernel
/// density: cov = (sum H_i^{-1})^{-1}, mean = cov * sum H_i^{-1} t_i.
GaussianMoments conditional_gaussian(std::span<const Vec> t, std::span<const Bandwidth> h);

/// conditional_gaussian with the precisions and Cholesky factor precomputed,
/// for repeated draws against one fixed bandwidth set.
class ConditionalGaussianSampler {
 public:
  explicit ConditionalGaussianSampler(std::span<const Bandwidth> h);

  Index dim() const noexcept { return cov_.rows(); }
  std::size_t subsets() const noexcept { return precisions_.size(); }
  const Mat& cov() const noexcept { return cov_; }
  /// `t` holds one row per subset.
  Vec mean(const Mat& t) const;
  Vec draw(const Mat& t, Rng& rng) const;

 private:
  std::vector<Mat> precisions_;
  Mat cov_;
  Mat chol_;
};

struct TransformBoundReport {
  double h = 0.0;
  double gamma = 2.0;
  double m_gamma = 0.0;
  double kappa_gamma = 1.0;
  double bound = 0.0;
  double observed_max_error = 0.0;
  bool violated = false;
};

}  // namespace wsampler
