#include "wsampler/evaluation.hpp"

#include "wsampler/error.hpp"
#include "wsampler/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wsampler {

namespace {

constexpr std::size_t kMaxGridPoints = 1u << 20;

bool degenerate(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

double positive_bandwidth(std::span<const double> x, std::span<const double> w) {
  return std::max(silverman_bandwidth(x, w), 1e-300);
}

// Enough points that the narrowest kernel spans at least four grid steps.
std::size_t resolved_points(double lo, double hi, double min_h, Index requested) {
  const double need = std::ceil((hi - lo) / (0.25 * min_h)) + 1.0;
  const double pts = std::max(static_cast<double>(requested), std::min(need, 1.0 * kMaxGridPoints));
  return static_cast<std::size_t>(pts);
}

void check_sample(std::span<const double> x, std::span<const double> w) {
  require(!x.empty(), Errc::invalid_argument, "tv_distance: empty sample");
  require(w.empty() || w.size() == x.size(), Errc::dimension_mismatch,
          "tv_distance: weights differ in length");
  for (double v : x) require(std::isfinite(v), Errc::non_finite, "tv_distance: non-finite draw");
}

double half_l1(std::span<const double> grid, std::span<const double> p, std::span<const double> q) {
  std::vector<double> diff(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) diff[g] = std::abs(p[g] - q[g]);
  return 0.5 * trapezoid(grid, diff);
}

}  // namespace

double tv_distance(std::span<const double> a, std::span<const double> wa,
                   std::span<const double> b, std::span<const double> wb, Index grid_points) {
  check_sample(a, wa);
  check_sample(b, wb);
  const bool da = degenerate(a), db = degenerate(b);
  if (da || db) return (da && db && a.front() == b.front()) ? 0.0 : 1.0;
  const double ha = positive_bandwidth(a, wa), hb = positive_bandwidth(b, wb);
  const std::array<std::span<const double>, 2> both{a, b};
  auto coarse = pooled_grid(both, 2, 4.0);
  const auto points = resolved_points(coarse.front(), coarse.back(), std::min(ha, hb), grid_points);
  const auto grid = uniform_grid(coarse.front(), coarse.back(), points);
  const auto pa = kde_density(a, wa, ha, grid);
  const auto pb = kde_density(b, wb, hb, grid);
  return std::clamp(half_l1(grid, pa, pb), 0.0, 1.0);
}

double tv_distance(std::span<const double> a, std::span<const double> wa, const Density1D& q,
                   Index grid_points) {
  check_sample(a, wa);
  if (degenerate(a)) return 1.0;
  const double ha = positive_bandwidth(a, wa);
  const std::array<std::span<const double>, 1> one{a};
  auto coarse = pooled_grid(one, 2, 4.0);
  const auto points = resolved_points(coarse.front(), coarse.back(), ha, grid_points);
  const auto grid = uniform_grid(coarse.front(), coarse.back(), points);
  const auto pa = kde_density(a, wa, ha, grid);
  std::vector<double> qv(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    qv[g] = q(grid[g]);
    require(std::isfinite(qv[g]) && qv[g] >= 0.0, Errc::non_finite,
            "tv_distance: reference density is negative or not finite");
  }
  const double outside = std::max(0.0, 1.0 - trapezoid(grid, qv));
  return std::clamp(half_l1(grid, pa, qv) + 0.5 * outside, 0.0, 1.0);
}

double tv_distance(const GridDensity& p, const GridDensity& q) {
  require(p.grid() == q.grid(), Errc::dimension_mismatch, "tv_distance: grids differ");
  return std::clamp(half_l1(p.grid(), p.values(), q.values()), 0.0, 1.0);
}

double gaussian_kl(const Vec& approx_mean, const Mat& approx_cov, const Vec& ref_mean,
                   const Mat& ref_cov) {
  const Index p = approx_mean.size();
  require(ref_mean.size() == p && approx_cov.rows() == p && ref_cov.rows() == p,
          Errc::dimension_mismatch, "gaussian_kl: dimensions differ");
  const Mat sa = ridge_repair(approx_cov).cov;
  const Mat sr = ridge_repair(ref_cov).cov;
  const Mat sr_inv = spd_inverse(sr);
  const Vec diff = ref_mean - approx_mean;
  const double kl = 0.5 * ((sr_inv * sa).trace() + diff.dot(sr_inv * diff) -
                           static_cast<double>(p) - (log_det_spd(sa) - log_det_spd(sr)));
  return std::max(kl, 0.0);
}

double gaussian_kl(const Mat& approx, std::span<const double> weights, const Mat& reference) {
  require(approx.cols() == reference.cols(), Errc::dimension_mismatch,
          "gaussian_kl: dimensions differ");
  Vec ma;
  Mat sa;
  if (weights.empty()) {
    ma = sample_mean(approx);
    sa = sample_cov(approx);
  } else {
    ma = weighted_mean(approx, weights);
    sa = weighted_cov(approx, weights);
  }
  return gaussian_kl(ma, sa, sample_mean(reference), sample_cov(reference));
}

double error_ratio(const Vec& approx_mean, const Vec& reference_mean, const Vec& true_theta) {
  require(approx_mean.size() == true_theta.size() && reference_mean.size() == true_theta.size(),
          Errc::dimension_mismatch, "error_ratio: dimensions differ");
  const double denom = (reference_mean - true_theta).norm();
  require(denom > 0.0, Errc::invalid_argument,
          "error_ratio: reference mean equals the true parameter");
  return (approx_mean - true_theta).norm() / denom;
}

std::vector<TransformBoundReport> verify_transform_bound(const AnalyticDensity& f,
                                                         std::span<const double> h_list,
                                                         Index grid_points) {
  require(f.pdf && f.second_derivative, Errc::invalid_argument,
          "verify_transform_bound needs a density and its second derivative");
  const auto grid = uniform_grid(f.lo, f.hi, static_cast<std::size_t>(grid_points));
  const GridDensity base = GridDensity::from_function(f.pdf, f.lo, f.hi,
                                                      static_cast<std::size_t>(grid_points));
  double m2 = 0.0;
  const auto dense = uniform_grid(f.lo, f.hi, 16 * static_cast<std::size_t>(grid_points));
  for (double x : dense) m2 = std::max(m2, std::abs(f.second_derivative(x)));
  const KernelSpec spec = KernelSpec::gaussian();
  std::vector<TransformBoundReport> out;
  for (double h : h_list) {
    require(h >= 0.0, Errc::invalid_argument, "bandwidths must be non-negative");
    TransformBoundReport r;
    r.h = h;
    r.gamma = 2.0;
    r.m_gamma = m2;
    r.kappa_gamma = spec.second_moment;
    r.bound = m2 * spec.second_moment * h * h / 2.0;
    r.observed_max_error = h == 0.0 ? 0.0 : weierstrass_transform(base, h, spec).max_abs_difference(base);
    r.violated = r.observed_max_error > r.bound;
    out.push_back(r);
  }
  return out;
}

Vec weighted_column_mean(const DrawMatrix& d, std::span<const double> weights) {
  return weights.empty() ? sample_mean(d.values()) : weighted_mean(d.values(), weights);
}

MetricReport evaluate_draws(const DrawMatrix& approx, std::span<const double> weights,
                            const DrawMatrix& reference, const std::optional<Vec>& true_theta,
                            Index grid_points) {
  require(approx.dim() == reference.dim(), Errc::dimension_mismatch,
          "evaluate_draws: dimensions differ");
  MetricReport r;
  double nz = 0.0, z = 0.0;
  int nnz = 0, nzero = 0;
  for (Index j = 0; j < approx.dim(); ++j) {
    const auto a = approx.column(j);
    const auto b = reference.column(j);
    r.tv.push_back(tv_distance(a, weights, b, {}, grid_points));
    if (true_theta) {
      if ((*true_theta)(j) != 0.0) {
        nz += r.tv.back();
        ++nnz;
      } else {
        z += r.tv.back();
        ++nzero;
      }
    }
  }
  double sum = 0.0;
  for (double v : r.tv) sum += v;
  r.tv_mean = sum / static_cast<double>(r.tv.size());
  if (nnz > 0) r.tv_nonzero_mean = nz / nnz;
  if (nzero > 0) r.tv_zero_mean = z / nzero;
  if (approx.draws() > approx.dim() && reference.draws() > reference.dim()) {
    try {
      r.kl = gaussian_kl(approx.values(), weights, reference.values());
    } catch (const Error&) {
      r.kl.reset();
    }
  }
  if (true_theta) {
    try {
      r.error_ratio = error_ratio(weighted_column_mean(approx, weights),
                                  sample_mean(reference.values()), *true_theta);
    } catch (const Error&) {
      r.error_ratio.reset();
    }
  }
  if (!weights.empty()) r.ess = kish_ess(weights);
  return r;
}

MetricReport evaluate_draws(const DrawMatrix& approx, std::span<const double> weights,
                            std::span<const Density1D> marginals, Index grid_points) {
  require(static_cast<Index>(marginals.size()) == approx.dim(), Errc::dimension_mismatch,
          "evaluate_draws: one marginal density per coordinate is required");
  MetricReport r;
  double sum = 0.0;
  for (Index j = 0; j < approx.dim(); ++j) {
    r.tv.push_back(tv_distance(approx.column(j), weights, marginals[static_cast<std::size_t>(j)],
                               grid_points));
    sum += r.tv.back();
  }
  r.tv_mean = sum / static_cast<double>(r.tv.size());
  if (!weights.empty()) r.ess = kish_ess(weights);
  return r;
}

}  // namespace wsampler
