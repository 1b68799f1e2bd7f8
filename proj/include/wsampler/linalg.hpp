#pragma once

#include <Eigen/Dense>

#include <span>

namespace wsampler {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

bool is_symmetric(const Mat& a, double tol = 1e-12);

/// Symmetric and every eigenvalue strictly positive.
bool is_spd(const Mat& a, double sym_tol = 1e-12);

Mat symmetrize(const Mat& a);

/// Inverse of an SPD matrix via Cholesky; throws Errc::not_spd otherwise.
Mat spd_inverse(const Mat& a);

/// Lower Cholesky factor; throws Errc::not_spd.
Mat cholesky_lower(const Mat& a);

double log_det_spd(const Mat& a);

struct RidgeRepair {
  Mat cov;
  bool repaired = false;
};

/// Adds 1e-8 * trace / p to the diagonal (growing tenfold, at most eight
/// times) until the matrix is SPD.
RidgeRepair ridge_repair(const Mat& cov);

// Row-wise sample moments: rows are draws, columns are coordinates.
Vec sample_mean(const Mat& draws);
Mat sample_cov(const Mat& draws);
Vec weighted_mean(const Mat& draws, std::span<const double> weights);
Mat weighted_cov(const Mat& draws, std::span<const double> weights);

/// Kish effective sample size of normalized or unnormalized weights.
double kish_ess(std::span<const double> weights);

}  // namespace wsampler
