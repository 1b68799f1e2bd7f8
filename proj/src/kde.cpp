#include "wsampler/kde.hpp"

#include "wsampler/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wsampler {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kLogUnderflow = -690.7755278982137;  // log(1e-300)

}  // namespace

double sample_mean_1d(std::span<const double> x, std::span<const double> weights) {
  require(!x.empty(), Errc::invalid_argument, "empty sample");
  if (weights.empty()) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
  }
  require(weights.size() == x.size(), Errc::dimension_mismatch, "weights differ in length");
  double s = 0.0, w = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += weights[i] * x[i];
    w += weights[i];
  }
  return s / w;
}

double sample_sd(std::span<const double> x, std::span<const double> weights) {
  const double mu = sample_mean_1d(x, weights);
  if (x.size() < 2) return 0.0;
  if (weights.empty()) {
    double s = 0.0;
    for (double v : x) s += (v - mu) * (v - mu);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
  }
  double s = 0.0, w = 0.0, w2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += weights[i] * (x[i] - mu) * (x[i] - mu);
    w += weights[i];
    w2 += weights[i] * weights[i];
  }
  const double denom = w - w2 / w;
  return denom > 0.0 ? std::sqrt(s / denom) : 0.0;
}

double silverman_bandwidth(std::span<const double> x, std::span<const double> weights) {
  const double sd = sample_sd(x, weights);
  const double n = weights.empty() ? static_cast<double>(x.size()) : kish_ess(weights);
  return 1.06 * sd * std::pow(n, -0.2);
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
  require(points >= 2 && hi > lo && std::isfinite(lo) && std::isfinite(hi),
          Errc::invalid_argument, "invalid grid bounds");
  std::vector<double> g(points);
  const double dx = (hi - lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) g[i] = lo + dx * static_cast<double>(i);
  g.back() = hi;
  return g;
}

std::vector<double> pooled_grid(std::span<const std::span<const double>> samples,
                                std::size_t points, double pad_sd) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  std::vector<double> pooled;
  for (auto s : samples) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    pooled.insert(pooled.end(), s.begin(), s.end());
  }
  require(!pooled.empty(), Errc::invalid_argument, "pooled_grid: no samples");
  double sd = sample_sd(pooled);
  if (!(sd > 0.0)) sd = std::max(1e-12, 1e-6 * std::abs(lo));
  return uniform_grid(lo - pad_sd * sd, hi + pad_sd * sd, points);
}

std::vector<double> kde_values(std::span<const double> x, std::span<const double> weights,
                               double h, std::span<const double> grid) {
  require(h > 0.0 && std::isfinite(h), Errc::invalid_argument, "kde bandwidth must be positive");
  require(weights.empty() || weights.size() == x.size(), Errc::dimension_mismatch,
          "kde weights differ in length");
  std::vector<double> out(grid.size(), 0.0);
  double wsum = 0.0;
  if (weights.empty()) {
    wsum = static_cast<double>(x.size());
  } else {
    for (double w : weights) wsum += w;
  }
  const double norm = kInvSqrt2Pi / (h * wsum);
  const double reach = 8.0 * h;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    if (w == 0.0) continue;
    auto first = std::lower_bound(grid.begin(), grid.end(), x[i] - reach);
    auto last = std::upper_bound(first, grid.end(), x[i] + reach);
    for (auto it = first; it != last; ++it) {
      const double u = (*it - x[i]) / h;
      out[static_cast<std::size_t>(it - grid.begin())] += w * std::exp(-0.5 * u * u);
    }
  }
  for (auto& v : out) v *= norm;
  return out;
}

std::vector<double> kde_density(std::span<const double> x, std::span<const double> weights,
                                double h, std::span<const double> grid) {
  auto v = kde_values(x, weights, h, grid);
  const double mass = trapezoid(grid, v);
  require(mass > 0.0, Errc::disconnection, "kde has no mass on the grid");
  for (auto& e : v) e /= mass;
  return v;
}

std::vector<double> log_kde_product(std::span<const std::span<const double>> sets,
                                    std::span<const double> grid,
                                    std::span<const double> bandwidths) {
  require(!sets.empty(), Errc::invalid_argument, "log_kde_product: no sets");
  require(bandwidths.empty() || bandwidths.size() == sets.size(), Errc::dimension_mismatch,
          "log_kde_product: bandwidth count differs from set count");
  std::vector<double> acc(grid.size(), 0.0);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    double h = bandwidths.empty() ? silverman_bandwidth(sets[s]) : bandwidths[s];
    if (!(h > 0.0)) {
      // Constant draw set: give it a bandwidth at the grid resolution.
      h = (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1);
    }
    auto v = kde_values(sets[s], {}, h, grid);
    const double mass = trapezoid(grid, v);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      acc[g] += (v[g] > 0.0 && mass > 0.0) ? std::log(v[g] / mass)
                                             : -std::numeric_limits<double>::infinity();
    }
  }
  return acc;
}

ZoomedProduct zoomed_log_kde_product(std::span<const std::span<const double>> sets,
                                     std::size_t points) {
  std::vector<double> bw(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) bw[s] = silverman_bandwidth(sets[s]);
  auto grid = pooled_grid(sets, points, 3.0);
  for (auto& h : bw) {
    if (!(h > 0.0)) h = (grid.back() - grid.front()) / static_cast<double>(points - 1);
  }
  auto logv = log_kde_product(sets, grid, bw);
  const double peak = *std::max_element(logv.begin(), logv.end());
  if (!(peak > kLogUnderflow)) {
    fail(Errc::disconnection,
         "subset posterior disconnection: the product of subset densities underflows everywhere");
  }
  std::size_t first = 0, last = grid.size() - 1;
  while (first < grid.size() && !(logv[first] > peak - 40.0)) ++first;
  while (last > first && !(logv[last] > peak - 40.0)) --last;
  first = first > 0 ? first - 1 : 0;
  last = std::min(grid.size() - 1, last + 1);
  if (last - first + 1 >= points / 2) return {std::move(grid), std::move(logv)};
  auto fine = uniform_grid(grid[first], grid[last], points);
  // Normalizing each KDE on the narrower grid would rescale it; renormalize
  // each factor on the pooled grid instead by reusing the first-pass masses.
  std::vector<double> acc(points, 0.0);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    auto coarse = kde_values(sets[s], {}, bw[s], grid);
    const double mass = trapezoid(grid, coarse);
    auto v = kde_values(sets[s], {}, bw[s], fine);
    for (std::size_t g = 0; g < points; ++g) {
      acc[g] += (v[g] > 0.0 && mass > 0.0) ? std::log(v[g] / mass)
                                             : -std::numeric_limits<double>::infinity();
    }
  }
  return {std::move(fine), std::move(acc)};
}

std::vector<std::size_t> local_maxima(std::span<const double> values) {
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) {
    if (values[i] > values[i - 1] && values[i] >= values[i + 1]) {
      // Skip the trailing edge of a plateau counted at its first point.
      std::size_t j = i;
      while (j + 1 < values.size() && values[j + 1] == values[i]) ++j;
      if (j + 1 < values.size() && values[j + 1] < values[i]) out.push_back(i);
      i = j;
    }
  }
  return out;
}

double effective_sample_size(std::span<const double> chain) {
  const std::size_t n = chain.size();
  if (n < 4) return static_cast<double>(n);
  const double mu = sample_mean_1d(chain);
  double c0 = 0.0;
  for (double v : chain) c0 += (v - mu) * (v - mu);
  c0 /= static_cast<double>(n);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (chain[i] - mu) * (chain[i + lag] - mu);
    return s / static_cast<double>(n);
  };
  double tau = -1.0;  // -rho_0 + 2 * sum of paired sums
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return std::min(static_cast<double>(n) * std::log10(static_cast<double>(n)),
                  static_cast<double>(n) / tau);
}

}  // namespace wsampler
