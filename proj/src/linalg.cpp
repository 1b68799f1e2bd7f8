#include "wsampler/linalg.hpp"

#include "wsampler/error.hpp"

#include <cmath>

namespace wsampler {

bool is_symmetric(const Mat& a, double tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

bool is_spd(const Mat& a, double sym_tol) {
  if (a.rows() == 0 || !is_symmetric(a, sym_tol) || !a.allFinite()) return false;
  Eigen::LLT<Mat> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) return false;
  return (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all();
}

Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

Mat cholesky_lower(const Mat& a) {
  Eigen::LLT<Mat> llt(symmetrize(a));
  require(llt.info() == Eigen::Success, Errc::not_spd, "matrix is not positive definite");
  Mat l = llt.matrixL();
  require((l.diagonal().array() > 0.0).all(), Errc::not_spd, "matrix is not positive definite");
  return l;
}

Mat spd_inverse(const Mat& a) {
  Eigen::LLT<Mat> llt(symmetrize(a));
  require(llt.info() == Eigen::Success, Errc::not_spd, "matrix is not positive definite");
  Mat inv = llt.solve(Mat::Identity(a.rows(), a.cols()));
  return symmetrize(inv);
}

double log_det_spd(const Mat& a) {
  const Mat l = cholesky_lower(a);
  return 2.0 * l.diagonal().array().log().sum();
}

RidgeRepair ridge_repair(const Mat& cov) {
  RidgeRepair out{symmetrize(cov), false};
  if (is_spd(out.cov)) return out;
  const double p = static_cast<double>(cov.rows());
  double ridge = 1e-8 * std::max(out.cov.trace(), 1e-300) / p;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Mat trial = out.cov;
    trial.diagonal().array() += ridge;
    if (is_spd(trial)) {
      out.cov = trial;
      out.repaired = true;
      return out;
    }
    ridge *= 10.0;
  }
  fail(Errc::not_spd, "covariance is singular after ridge repair");
}

Vec sample_mean(const Mat& draws) {
  require(draws.rows() > 0, Errc::invalid_argument, "sample_mean: no draws");
  return draws.colwise().mean().transpose();
}

Mat sample_cov(const Mat& draws) {
  require(draws.rows() > 1, Errc::invalid_argument, "sample_cov: need at least two draws");
  const Vec mu = sample_mean(draws);
  const Mat centered = draws.rowwise() - mu.transpose();
  return symmetrize(centered.transpose() * centered / static_cast<double>(draws.rows() - 1));
}

Vec weighted_mean(const Mat& draws, std::span<const double> weights) {
  require(static_cast<Index>(weights.size()) == draws.rows(), Errc::dimension_mismatch,
          "weighted_mean: weight count differs from draw count");
  Eigen::Map<const Vec> w(weights.data(), static_cast<Index>(weights.size()));
  const double total = w.sum();
  require(total > 0.0, Errc::invalid_argument, "weighted_mean: weights sum to zero");
  return (draws.transpose() * w) / total;
}

Mat weighted_cov(const Mat& draws, std::span<const double> weights) {
  const Vec mu = weighted_mean(draws, weights);
  Eigen::Map<const Vec> w(weights.data(), static_cast<Index>(weights.size()));
  const double total = w.sum();
  const Vec wn = w / total;
  const double denom = 1.0 - wn.squaredNorm();
  require(denom > 0.0, Errc::invalid_argument, "weighted_cov: degenerate weights");
  const Mat centered = draws.rowwise() - mu.transpose();
  return symmetrize(centered.transpose() * wn.asDiagonal() * centered / denom);
}

double kish_ess(std::span<const double> weights) {
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    s += w;
    s2 += w * w;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::not_spd: return "not_spd";
    case Errc::grid_too_narrow: return "grid_too_narrow";
    case Errc::non_finite: return "non_finite";
    case Errc::non_convergence: return "non_convergence";
    case Errc::indefinite_hessian: return "indefinite_hessian";
    case Errc::disconnection: return "disconnection";
    case Errc::starvation: return "starvation";
    case Errc::unreachable_target: return "unreachable_target";
    case Errc::schema_mismatch: return "schema_mismatch";
    case Errc::unsupported: return "unsupported";
    case Errc::io: return "io";
    case Errc::config: return "config";
  }
  return "unknown";
}

}  // namespace wsampler
