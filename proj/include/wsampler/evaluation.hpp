#pragma once

#include "wsampler/draws.hpp"
#include "wsampler/kernel.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace wsampler {

using Density1D = std::function<double(double)>;

/// Half the L1 distance between two weighted samples, each rendered as a
/// normalized Gaussian KDE (Silverman) on a shared grid spanning the pooled
/// range +- 4 pooled sds. A zero-variance sample is treated as a point mass:
/// TV is 0 against the same point mass and 1 against anything else.
double tv_distance(std::span<const double> a, std::span<const double> wa,
                   std::span<const double> b, std::span<const double> wb,
                   Index grid_points = 2048);

/// Same, against an analytic density; the density's mass off the grid counts
/// fully toward the distance.
double tv_distance(std::span<const double> a, std::span<const double> wa, const Density1D& q,
                   Index grid_points = 2048);

/// Half the L1 distance between two tabulated densities on the same grid.
double tv_distance(const GridDensity& p, const GridDensity& q);

/// KL(N(u_hat, S_hat) || N(u, S)) written as
/// 1/2 (tr(S^{-1} S_hat) + (u - u_hat)' S^{-1} (u - u_hat) - p - log(|S_hat|/|S|)).
double gaussian_kl(const Vec& approx_mean, const Mat& approx_cov, const Vec& ref_mean,
                   const Mat& ref_cov);
/// Fits moments to each side (weighted for `approx` when weights are given).
double gaussian_kl(const Mat& approx, std::span<const double> weights, const Mat& reference);

/// ||approx - truth|| / ||reference - truth||.
double error_ratio(const Vec& approx_mean, const Vec& reference_mean, const Vec& true_theta);

struct AnalyticDensity {
  Density1D pdf;
  Density1D second_derivative;
  double lo = -8.0;
  double hi = 8.0;
};

/// Transform error against the bound M2 * kappa2 * h^2 / 2 on a 2048-point
/// grid. M2 is the maximum |f''| over a dense grid of the closed form.
std::vector<TransformBoundReport> verify_transform_bound(const AnalyticDensity& f,
                                                         std::span<const double> h_list,
                                                         Index grid_points = 2048);

struct MetricReport {
  std::vector<double> tv;  // per coordinate
  std::optional<double> tv_nonzero_mean;
  std::optional<double> tv_zero_mean;
  double tv_mean = 0.0;
  std::optional<double> kl;
  std::optional<double> error_ratio;
  std::optional<double> ess;
};

/// Marginal TVs and Gaussian KL of `approx` against a reference sample. Group
/// means split coordinates by whether `true_theta` is zero.
MetricReport evaluate_draws(const DrawMatrix& approx, std::span<const double> weights,
                            const DrawMatrix& reference,
                            const std::optional<Vec>& true_theta = std::nullopt,
                            Index grid_points = 2048);

/// Marginal TVs against analytic marginals (one density per coordinate).
MetricReport evaluate_draws(const DrawMatrix& approx, std::span<const double> weights,
                            std::span<const Density1D> marginals, Index grid_points = 2048);

Vec weighted_column_mean(const DrawMatrix& d, std::span<const double> weights);

}  // namespace wsampler
