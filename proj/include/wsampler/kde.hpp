#pragma once

#include "wsampler/kernel.hpp"

#include <span>
#include <vector>

namespace wsampler {

/// Silverman's rule 1.06 * sd * N^{-1/5}. With weights, sd is the weighted
/// standard deviation and N the Kish effective sample size. Returns 0 for a
/// zero-variance sample.
double silverman_bandwidth(std::span<const double> x, std::span<const double> weights = {});

double sample_sd(std::span<const double> x, std::span<const double> weights = {});
double sample_mean_1d(std::span<const double> x, std::span<const double> weights = {});

std::vector<double> uniform_grid(double lo, double hi, std::size_t points);

/// Grid spanning [min - pad*sd, max + pad*sd] over the pooled samples.
std::vector<double> pooled_grid(std::span<const std::span<const double>> samples,
                                std::size_t points, double pad_sd);

/// Gaussian KDE evaluated at the grid nodes (unnormalized on the grid).
/// Kernel contributions beyond 8 bandwidths are dropped.
std::vector<double> kde_values(std::span<const double> x, std::span<const double> weights,
                               double h, std::span<const double> grid);

/// KDE normalized to unit trapezoid mass on `grid`.
std::vector<double> kde_density(std::span<const double> x, std::span<const double> weights,
                                double h, std::span<const double> grid);

/// Sum over sets of log KDE (each normalized on `grid`), evaluated on grid.
/// Silverman bandwidth per set unless `bandwidths` is given.
std::vector<double> log_kde_product(std::span<const std::span<const double>> sets,
                                    std::span<const double> grid,
                                    std::span<const double> bandwidths = {});

struct ZoomedProduct {
  std::vector<double> grid;
  std::vector<double> log_values;
};

/// log_kde_product on a pooled grid, then again on the sub-interval where
/// the log product is within 40 of its maximum. Throws disconnection when
/// the product underflows (maximum below log(1e-300)) on the first pass.
ZoomedProduct zoomed_log_kde_product(std::span<const std::span<const double>> sets,
                                     std::size_t points);

/// Interior grid indices that are strict local maxima of `values`.
std::vector<std::size_t> local_maxima(std::span<const double> values);

/// Autocorrelation-based ESS (Geyer initial positive sequence).
double effective_sample_size(std::span<const double> chain);

}  // namespace wsampler
