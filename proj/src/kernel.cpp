#include "wsampler/kernel.hpp"

#include "wsampler/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace wsampler {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double std_normal_pdf(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }

// Phi(b) - Phi(a) for a <= b, evaluated in whichever tail keeps precision.
double normal_mass(double a, double b) {
  constexpr double r = std::numbers::sqrt2 / 2.0;
  if (a >= 0.0) return 0.5 * (std::erfc(a * r) - std::erfc(b * r));
  if (b <= 0.0) return 0.5 * (std::erfc(-b * r) - std::erfc(-a * r));
  return 1.0 - 0.5 * std::erfc(-a * r) - 0.5 * std::erfc(b * r);
}

}  // namespace

double KernelSpec::log_sup() const { return std::log(sup_value); }

double kernel_eval(const KernelSpec& spec, double u) {
  switch (spec.family) {
    case KernelFamily::gaussian: return std_normal_pdf(u);
  }
  return 0.0;
}

double kernel_log_eval(const KernelSpec& spec, double u) {
  switch (spec.family) {
    case KernelFamily::gaussian: return std::log(kInvSqrt2Pi) - 0.5 * u * u;
  }
  return -INFINITY;
}

// ---------------------------------------------------------------- Bandwidth

Bandwidth Bandwidth::scalar(double h, Index dim) {
  require(std::isfinite(h) && h > 0.0, Errc::invalid_argument, "bandwidth must be positive");
  require(dim >= 1, Errc::invalid_argument, "bandwidth dimension must be positive");
  return Bandwidth(Form::scalar, Mat::Identity(dim, dim) * (h * h));
}

Bandwidth Bandwidth::diagonal(const Vec& h) {
  require(h.size() >= 1 && h.allFinite() && (h.array() > 0.0).all(), Errc::invalid_argument,
          "diagonal bandwidth entries must be positive");
  return Bandwidth(Form::diagonal, h.array().square().matrix().asDiagonal());
}

Bandwidth Bandwidth::full(const Mat& cov) {
  require(is_spd(cov, 1e-12), Errc::not_spd, "bandwidth matrix must be symmetric positive-definite");
  return Bandwidth(Form::full, symmetrize(cov));
}

Mat Bandwidth::precision() const {
  if (form_ != Form::full) return cov_.diagonal().cwiseInverse().asDiagonal();
  return spd_inverse(cov_);
}

Vec Bandwidth::sd() const { return cov_.diagonal().cwiseSqrt(); }

double Bandwidth::scalar_h() const {
  require(form_ == Form::scalar, Errc::invalid_argument, "bandwidth is not scalar");
  return std::sqrt(cov_(0, 0));
}

Bandwidth Bandwidth::scaled(double factor) const {
  require(std::isfinite(factor) && factor > 0.0, Errc::invalid_argument,
          "bandwidth scale factor must be positive");
  return Bandwidth(form_, cov_ * factor);
}

BandwidthSchedule::BandwidthSchedule(Bandwidth base, std::vector<double> multipliers)
    : base_(std::move(base)), multipliers_(std::move(multipliers)) {
  require(!multipliers_.empty(), Errc::invalid_argument, "schedule needs at least one step");
  for (std::size_t s = 0; s < multipliers_.size(); ++s) {
    require(std::isfinite(multipliers_[s]) && multipliers_[s] > 0.0, Errc::invalid_argument,
            "schedule multipliers must be positive");
    if (s > 0) {
      require(multipliers_[s] <= multipliers_[s - 1], Errc::invalid_argument,
              "schedule multipliers must be non-increasing");
    }
  }
}

// -------------------------------------------------------------- GridDensity

double trapezoid(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

GridDensity::GridDensity(std::vector<double> grid, std::vector<double> values, bool normalize)
    : grid_(std::move(grid)), values_(std::move(values)) {
  require(grid_.size() >= 2, Errc::invalid_argument, "grid needs at least two points");
  require(grid_.size() == values_.size(), Errc::dimension_mismatch,
          "grid and values differ in length");
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    require(std::isfinite(grid_[i]), Errc::non_finite, "grid point is not finite");
    if (i > 0) require(grid_[i] > grid_[i - 1], Errc::invalid_argument, "grid must be increasing");
    require(std::isfinite(values_[i]) && values_[i] >= 0.0, Errc::invalid_argument,
            "density values must be finite and non-negative");
  }
  if (normalize) {
    const double mass = integral();
    require(mass > 0.0, Errc::invalid_argument, "density has zero mass on the grid");
    for (auto& v : values_) v /= mass;
  }
}

GridDensity GridDensity::from_function(const std::function<double(double)>& f, double lo,
                                       double hi, std::size_t points, bool normalize) {
  require(points >= 2 && hi > lo, Errc::invalid_argument, "invalid grid specification");
  std::vector<double> x(points), y(points);
  const double dx = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    x[i] = lo + dx * static_cast<double>(i);
    y[i] = f(x[i]);
  }
  x.back() = hi;
  return GridDensity(std::move(x), std::move(y), normalize);
}

double GridDensity::integral() const { return trapezoid(grid_, values_); }

double GridDensity::mean() const {
  std::vector<double> xy(size());
  for (std::size_t i = 0; i < size(); ++i) xy[i] = grid_[i] * values_[i];
  return trapezoid(grid_, xy) / integral();
}

double GridDensity::variance() const {
  const double mu = mean();
  std::vector<double> v(size());
  for (std::size_t i = 0; i < size(); ++i) v[i] = (grid_[i] - mu) * (grid_[i] - mu) * values_[i];
  return trapezoid(grid_, v) / integral();
}

double GridDensity::value_at(double x) const {
  if (x < grid_.front() || x > grid_.back()) return 0.0;
  auto it = std::upper_bound(grid_.begin(), grid_.end(), x);
  if (it == grid_.end()) return values_.back();
  const std::size_t j = static_cast<std::size_t>(it - grid_.begin());
  const std::size_t i = j - 1;
  const double w = (x - grid_[i]) / (grid_[j] - grid_[i]);
  return (1.0 - w) * values_[i] + w * values_[j];
}

double GridDensity::max_abs_difference(const GridDensity& other) const {
  double d = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    d = std::max(d, std::abs(values_[i] - other.value_at(grid_[i])));
  }
  return d;
}

double GridDensity::sample(Rng& rng) const {
  if (cdf_.empty()) {
    cdf_.assign(size(), 0.0);
    for (std::size_t i = 1; i < size(); ++i) {
      cdf_[i] = cdf_[i - 1] + 0.5 * (grid_[i] - grid_[i - 1]) * (values_[i] + values_[i - 1]);
    }
  }
  const double total = cdf_.back();
  const double u = rng.uniform() * total;
  auto it = std::upper_bound(cdf_.begin() + 1, cdf_.end(), u);
  if (it == cdf_.end()) --it;
  const std::size_t j = static_cast<std::size_t>(it - cdf_.begin());
  const std::size_t i = j - 1;
  // Invert the quadratic CDF of the linear segment between nodes i and j.
  const double dx = grid_[j] - grid_[i];
  const double f0 = values_[i];
  const double slope = (values_[j] - values_[i]) / dx;
  const double r = u - cdf_[i];
  double s;
  if (std::abs(slope) * dx < 1e-12 * std::max(f0, 1e-300)) {
    s = f0 > 0.0 ? r / f0 : 0.5 * dx;
  } else {
    const double disc = std::max(0.0, f0 * f0 + 2.0 * slope * r);
    s = 2.0 * r / (f0 + std::sqrt(disc));
  }
  return grid_[i] + std::clamp(s, 0.0, dx);
}

// ---------------------------------------------------- Weierstrass transform

GridDensity weierstrass_transform(const GridDensity& f, double h, const KernelSpec& spec) {
  require(std::isfinite(h) && h > 0.0, Errc::invalid_argument, "transform bandwidth must be positive");
  require(spec.family == KernelFamily::gaussian, Errc::unsupported, "only the gaussian kernel is supported");
  const auto& t = f.grid();
  const auto& y = f.values();
  const std::size_t n = t.size();
  std::vector<double> out(n, 0.0);
  std::vector<double> mass(n), pdf(n);
  const double reach = 40.0 * h;
  for (std::size_t a = 0; a < n; ++a) {
    const double x = t[a];
    const std::size_t lo = static_cast<std::size_t>(
        std::max<std::ptrdiff_t>(0, (std::lower_bound(t.begin(), t.end(), x - reach) - t.begin()) - 1));
    const std::size_t hi = std::min<std::size_t>(
        n - 1, static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), x + reach) - t.begin()));
    double acc = 0.0;
    for (std::size_t b = lo; b < hi; ++b) {
      const double u0 = (t[b] - x) / h;
      const double u1 = (t[b + 1] - x) / h;
      const double slope = (y[b + 1] - y[b]) / (t[b + 1] - t[b]);
      acc += (y[b] + slope * (x - t[b])) * normal_mass(u0, u1) +
             slope * h * (std_normal_pdf(u0) - std_normal_pdf(u1));
    }
    out[a] = std::max(0.0, acc);
  }
  const double kept = trapezoid(t, out) / f.integral();
  if (1.0 - kept > 1e-4) {
    fail(Errc::grid_too_narrow, "weierstrass_transform: " + std::to_string(1.0 - kept) +
                                    " of the transformed mass falls outside the grid");
  }
  return GridDensity(t, std::move(out), true);
}

// ---------------------------------------------------------------- Bandwidths

Bandwidth fukunaga_bandwidth(Index p, Index n, const Mat& sigma_hat) {
  require(p >= 1, Errc::invalid_argument, "fukunaga_bandwidth: p must be positive");
  require(n >= 2, Errc::invalid_argument, "fukunaga_bandwidth: need at least two samples");
  require(sigma_hat.rows() == p && sigma_hat.cols() == p, Errc::dimension_mismatch,
          "fukunaga_bandwidth: covariance dimension differs from p");
  require(is_spd(sigma_hat, 1e-12), Errc::not_spd,
          "fukunaga_bandwidth: covariance must be symmetric positive-definite");
  const double pd = static_cast<double>(p);
  const double expo = -2.0 / (pd + 4.0);
  const double factor = std::pow((pd + 2.0) / 4.0, expo) * std::pow(static_cast<double>(n), expo);
  return Bandwidth::full(symmetrize(sigma_hat) * factor);
}

BandwidthSchedule refinement_schedule(const Bandwidth& h0, Index m, Index steps) {
  require(m >= 1, Errc::invalid_argument, "refinement_schedule: m must be positive");
  require(steps >= 1, Errc::invalid_argument, "refinement_schedule: steps must be positive");
  // Integer arithmetic keeps 3/5/2 exact at ten steps.
  const Index first = (3 * steps) / 10;
  const Index last = std::max<Index>(1, (2 * steps + 5) / 10);
  const Index middle = steps - first - last;
  const double md = static_cast<double>(m);
  std::vector<double> mult;
  mult.reserve(static_cast<std::size_t>(steps));
  for (Index s = 0; s < first; ++s) mult.push_back(md);
  for (Index s = 0; s < middle; ++s) mult.push_back(1.0);
  for (Index s = 0; s < last; ++s) mult.push_back(1.0 / md);
  return BandwidthSchedule(h0, std::move(mult));
}

// ------------------------------------------------------ Conditional Gaussian

GaussianMoments conditional_gaussian(std::span<const Vec> t, std::span<const Bandwidth> h) {
  require(!t.empty() && t.size() == h.size(), Errc::dimension_mismatch,
          "conditional_gaussian: need equal, non-empty lists");
  const Index d = h.front().dim();
  Mat prec = Mat::Zero(d, d);
  Vec eta = Vec::Zero(d);
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i].size() == d && h[i].dim() == d, Errc::dimension_mismatch,
            "conditional_gaussian: dimension mismatch");
    const Mat p = h[i].precision();
    prec += p;
    eta += p * t[i];
  }
  GaussianMoments out;
  out.cov = spd_inverse(prec);
  out.mean = out.cov * eta;
  return out;
}

ConditionalGaussianSampler::ConditionalGaussianSampler(std::span<const Bandwidth> h) {
  require(!h.empty(), Errc::invalid_argument, "conditional sampler needs at least one subset");
  const Index d = h.front().dim();
  Mat prec = Mat::Zero(d, d);
  precisions_.reserve(h.size());
  for (const auto& b : h) {
    require(b.dim() == d, Errc::dimension_mismatch, "conditional sampler: dimension mismatch");
    precisions_.push_back(b.precision());
    prec += precisions_.back();
  }
  cov_ = spd_inverse(prec);
  chol_ = cholesky_lower(cov_);
}

Vec ConditionalGaussianSampler::mean(const Mat& t) const {
  require(t.rows() == static_cast<Index>(precisions_.size()) && t.cols() == dim(),
          Errc::dimension_mismatch, "conditional sampler: t has the wrong shape");
  Vec eta = Vec::Zero(dim());
  for (std::size_t i = 0; i < precisions_.size(); ++i) {
    eta.noalias() += precisions_[i] * t.row(static_cast<Index>(i)).transpose();
  }
  return cov_ * eta;
}

Vec ConditionalGaussianSampler::draw(const Mat& t, Rng& rng) const {
  Vec z(dim());
  for (Index j = 0; j < dim(); ++j) z(j) = rng.normal();
  return mean(t) + chol_ * z;
}

}  // namespace wsampler
