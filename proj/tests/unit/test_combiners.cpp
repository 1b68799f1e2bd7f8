#include "wsampler/combiners.hpp"
#include "wsampler/error.hpp"
#include "wsampler/evaluation.hpp"
#include "wsampler/models.hpp"

#include <boost/math/distributions/beta.hpp>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace wsampler;

namespace {

std::vector<std::string> names(Index p) {
  std::vector<std::string> n;
  for (Index j = 0; j < p; ++j) n.push_back("t" + std::to_string(j + 1));
  return n;
}

SubsetRun gaussian_run(Index id, const Vec& mu, const Mat& cov, Index n, std::uint64_t seed) {
  return make_subset_run(id, gaussian_draws(mu, cov, n, seed, names(mu.size())));
}

SubsetRun const_run(Index id, Mat values) { return make_subset_run(id, DrawMatrix(std::move(values), names(values.cols()))); }

Partition identity_partition(Index m) {
  Partition p;
  p.m = m;
  for (Index i = 0; i < m; ++i) {
    p.assignment.push_back(i);
    p.members.push_back({i});
  }
  return p;
}

Vec v1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }

// Exact Beta draws for every subset of a Bernoulli dataset.
std::vector<SubsetRun> beta_runs(const Dataset& d, const Partition& part, Index n, std::uint64_t seed) {
  const BetaBernoulliModel model;
  ChainConfig cc;
  cc.iterations = n;
  cc.burnin = 0;
  cc.seed = seed;
  cc.proposal = Proposal::exact;
  return run_all_subsets(model, d, part, PriorFraction(part.m), cc, WorkerPool(1));
}

double full_beta_tv(const CombineResult& r, const Dataset& d) {
  const auto p = beta_posterior_params(BetaBernoulliModel(), bernoulli_counts(d), PriorFraction(1));
  boost::math::beta_distribution<> dist(p.a, p.b);
  const auto x = r.draws.column(0);
  const std::vector<double> w = r.weights ? *r.weights : std::vector<double>{};
  return tv_distance(x, w, [&](double t) { return t > 0 && t < 1 ? boost::math::pdf(dist, t) : 0.0; });
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("simple average") {
  const SubsetRun a = gaussian_run(0, v1(1.0), m1(1.0), 4000, 1);
  const auto one = combine_simple_average(std::vector<SubsetRun>{a});
  CHECK(one.draws.values() == a.draws.values());
  CHECK_FALSE(one.weights);

  const auto c = combine_simple_average(std::vector<SubsetRun>{const_run(0, Mat::Constant(50, 2, 3.5)),
                                                                const_run(1, Mat::Constant(50, 2, 3.5))});
  CHECK((c.draws.values().array() == 3.5).all());

  std::vector<SubsetRun> runs;
  const std::vector<double> mus{-1.0, 0.0, 2.0, 3.0};
  for (Index i = 0; i < 4; ++i) runs.push_back(gaussian_run(i, v1(mus[static_cast<std::size_t>(i)]), m1(4.0), 20000, 10 + i));
  const auto r = combine_simple_average(runs);
  const auto x = r.draws.values().col(0);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (x.size() - 1);
  const double n = static_cast<double>(x.size());
  CHECK(std::abs(mean - 1.0) <= 3 * std::sqrt(1.0 / n));
  CHECK(std::abs(var - 1.0) <= 3 * std::sqrt(2.0 / n));

  CHECK_THROWS_AS(combine_simple_average(std::vector<SubsetRun>{const_run(0, Mat::Zero(10, 1)), const_run(1, Mat::Zero(11, 1))}), Error);
}

TEST_CASE("weighted average") {
  SUBCASE("equal covariances reduce to the simple average") {
    std::vector<SubsetRun> runs;
    for (Index i = 0; i < 3; ++i) runs.push_back(gaussian_run(i, Vec::Constant(2, double(i)), Mat::Identity(2, 2), 500, 3 + i));
    for (auto& r : runs) {
      r.sample_cov = Mat::Identity(2, 2);
    }
    const auto w = combine_weighted_average(runs);
    const auto s = combine_simple_average(runs);
    CHECK(w.draws.values().isApprox(s.draws.values(), 1e-12));
  }
  SUBCASE("precision weights 0.8 and 0.2") {
    std::vector<SubsetRun> runs{const_run(0, Mat::Constant(10, 1, 1.0)), const_run(1, Mat::Constant(10, 1, 6.0))};
    runs[0].sample_cov = m1(1.0);
    runs[1].sample_cov = m1(4.0);
    const auto r = combine_weighted_average(runs);
    CHECK(r.draws.values()(0, 0) == doctest::Approx(0.8 * 1.0 + 0.2 * 6.0));
  }
  SUBCASE("gaussian product mean and permutation identity") {
    Mat c1(2, 2), c2(2, 2), c3(2, 2);
    c1 << 1.0, 0.3, 0.3, 0.5;
    c2 << 2.0, -0.4, -0.4, 1.0;
    c3 << 0.7, 0.0, 0.0, 0.7;
    const std::vector<Vec> mus{(Vec(2) << 0.0, 1.0).finished(), (Vec(2) << 1.0, -1.0).finished(),
                               (Vec(2) << 2.0, 0.5).finished()};
    const std::vector<Mat> covs{c1, c2, c3};
    const GaussianSubsetsModel g(mus, covs);
    const auto [mu, cov] = g.product_moments();
    // The weights come from sample covariances, so the Monte Carlo error of the
    // output mean is measured over independent replicate runs.
    const int reps = 12;
    Mat means(reps, 2);
    std::vector<SubsetRun> runs;
    for (int rep = 0; rep < reps; ++rep) {
      std::vector<SubsetRun> rr;
      for (Index i = 0; i < 3; ++i) rr.push_back(gaussian_run(i, mus[size_t(i)], covs[size_t(i)], 5000, 40 + 3 * rep + i));
      means.row(rep) = combine_weighted_average(rr).draws.values().colwise().mean();
      if (rep == 0) runs = rr;
    }
    const auto r = combine_weighted_average(runs);
    const Vec grand = means.colwise().mean().transpose();
    for (Index j = 0; j < 2; ++j) {
      const double se = std::sqrt((means.col(j).array() - grand(j)).square().sum() / (reps - 1));
      CHECK(se >= std::sqrt(cov(j, j) / 5000) * 0.5);
      CHECK(std::abs(means(0, j) - mu(j)) <= 3 * se);
      CHECK(std::abs(grand(j) - mu(j)) <= 3 * se / std::sqrt(double(reps)));
    }
    std::vector<SubsetRun> perm{runs[2], runs[0], runs[1]};
    CHECK(combine_weighted_average(perm).draws.values().isApprox(r.draws.values(), 1e-12));
    CHECK(combine_simple_average(perm).draws.values().isApprox(combine_simple_average(runs).draws.values(), 1e-12));
  }
}

TEST_CASE("kernel marginal") {
  const SubsetRun a = gaussian_run(0, v1(0.5), m1(0.3), 5000, 7);
  const auto one = combine_kernel_marginal(std::vector<SubsetRun>{a}, 2048, 3);
  CHECK(ks_two_sample(one.draws.column(0), a.draws.column(0)) <= 0.05);

  const Dataset d = generate_bernoulli(10000, 0.1, 12);
  const Partition part = partition(d, 20, 2);
  const auto runs = beta_runs(d, part, 5000, 4);
  const auto r = combine_kernel_marginal(runs, 2048, 5);
  CHECK(full_beta_tv(r, d) <= 0.1);

  const std::vector<SubsetRun> apart{gaussian_run(0, v1(-10), m1(1e-4), 1000, 1), gaussian_run(1, v1(10), m1(1e-4), 1000, 2)};
  try {
    combine_kernel_marginal(apart, 2048, 1);
    FAIL("expected disconnection");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::disconnection);
  }
}

TEST_CASE("refinement on Gaussian subsets matches the product") {
  const Index m = 3;
  const std::vector<Vec> mus{v1(-1.0), v1(0.5), v1(2.0)};
  const std::vector<Mat> covs{m1(1.0), m1(0.5), m1(2.0)};
  const GaussianSubsetsModel g(mus, covs);
  const auto [mu, cov] = g.product_moments();
  const Index n = 4000;
  // Started from the full-data Laplace approximation, which is the product here.
  const DrawMatrix init = gaussian_draws(mu, cov, n, 9, names(1));
  const Bandwidth h0 = fukunaga_bandwidth(1, n, cov);
  RefineConfig rc;
  rc.seed = 3;
  rc.inner_iterations = 20;
  const BandwidthSchedule sched(h0, std::vector<double>(5, 1.0));
  const auto r = weierstrass_refine(g, make_indexed_dataset(m), identity_partition(m), PriorFraction(m), init, sched, rc,
                                    WorkerPool(2));
  REQUIRE(r.draws.draws() == n);
  const auto x = r.draws.values().col(0);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (n - 1);
  CHECK(std::abs(mean - mu(0)) <= 3 * std::sqrt(cov(0, 0) / n));
  // Fixed point is the product of kernel-smoothed factors; its variance exceeds the product by a bandwidth term.
  CHECK(var == doctest::Approx(cov(0, 0)).epsilon(0.1));
  CHECK(r.diagnostics.schedule.size() == 5);

  const auto again = weierstrass_refine(g, make_indexed_dataset(m), identity_partition(m), PriorFraction(m), init, sched, rc,
                                        WorkerPool(1));
  CHECK(again.draws.values() == r.draws.values());
}

TEST_CASE("refinement with one subset and tiny bandwidth is a fixed point") {
  const GaussianSubsetsModel g({v1(1.0)}, {m1(0.25)});
  const Index n = 3000;
  const DrawMatrix init = gaussian_draws(v1(1.0), m1(0.25), n, 1, names(1));
  RefineConfig rc;
  rc.seed = 2;
  const BandwidthSchedule sched(Bandwidth::scalar(1e-4), {1.0, 1.0});
  const auto r = weierstrass_refine(g, make_indexed_dataset(1), identity_partition(1), PriorFraction(1), init, sched, rc,
                                    WorkerPool(1));
  const DrawMatrix ref = gaussian_draws(v1(1.0), m1(0.25), n, 77, names(1));
  CHECK(ks_two_sample(r.draws.column(0), ref.column(0)) <= 0.05);
}

TEST_CASE("rejection: identity and acceptance bounds") {
  const SubsetRun a = gaussian_run(0, v1(0.0), m1(1.0), 300, 1);
  RejectionConfig rc;
  rc.target_acceptance = std::nullopt;
  rc.bandwidths = {v1(0.3)};
  const auto one = weierstrass_reject(std::vector<SubsetRun>{a}, rc);
  CHECK(one.draws.values() == a.draws.values());
  CHECK(*one.diagnostics.acceptance_rate == 1.0);

  const Mat same = a.draws.values();
  const std::vector<Mat> sets{same, same, same};
  const std::vector<Vec> h{v1(0.1), v1(0.1), v1(0.1)};
  RejectionConfig rs;
  rs.target_acceptance = std::nullopt;
  rs.bandwidths = h;
  const auto r = weierstrass_reject(sets, rs);
  CHECK(*r.diagnostics.acceptance_rate == 1.0);
  CHECK(log_acceptance(Mat::Constant(3, 1, 2.0), 1, h) == 0.0);

  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    Mat tuple(3, 2);
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 2; ++j) tuple(i, j) = rng.normal();
    const std::vector<Vec> hh(3, Vec::Constant(2, 0.5));
    const double la = log_acceptance(tuple, k % 3, hh);
    CHECK(la < 0.0);
    CHECK(std::isfinite(la));
  }

  RejectionConfig both;
  both.bandwidths = {v1(0.1)};
  CHECK_THROWS_AS(both.validate(), Error);
  RejectionConfig neither;
  neither.target_acceptance = std::nullopt;
  CHECK_THROWS_AS(neither.validate(), Error);
}

TEST_CASE("acceptance rate scales as h^(p(m-1))") {
  for (Index m : {2, 3}) {
    std::vector<Mat> sets;
    for (Index i = 0; i < m; ++i) sets.push_back(gaussian_draws(v1(0.0), m1(1.0), 20000, 100 + i, names(1)).values());
    std::vector<double> lx, ly;
    for (double h : {0.05, 0.1, 0.15, 0.2, 0.3}) {
      const std::vector<Vec> bw(static_cast<std::size_t>(m), v1(h));
      lx.push_back(std::log(h));
      ly.push_back(std::log(pilot_acceptance(sets, bw, 20000, 7)));
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0, sxx = 0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
      sxy += (lx[k] - mx) * (ly[k] - my);
      sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    CHECK(std::abs(sxy / sxx - double(m - 1)) <= 0.3);
  }
}

TEST_CASE("bandwidth calibration") {
  const std::vector<Mat> sets{gaussian_draws(v1(0.0), m1(1.0), 5000, 1, names(1)).values(),
                              gaussian_draws(v1(0.0), m1(1.0), 5000, 2, names(1)).values()};
  const auto cal = calibrate_bandwidth(sets, 0.1, 2000, 3);
  CHECK_FALSE(cal.saturated);
  const double achieved = pilot_acceptance(sets, cal.bandwidths, 5000, 99);  // every aligned tuple
  CHECK(achieved >= 0.09);
  CHECK(achieved <= 0.11);
  double prev = 0.0;
  for (double mult : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0}) {
    std::vector<Vec> bw;
    for (const auto& b : cal.bandwidths) bw.push_back(b * (mult / cal.multiplier));
    const double ar = pilot_acceptance(sets, bw, 2000, 3);
    CHECK(ar >= prev);
    prev = ar;
  }
  const std::vector<Mat> same{sets[0], sets[0]};
  const auto sat = calibrate_bandwidth(same, 0.1, 2000, 3);
  CHECK(sat.saturated);
  CHECK(sat.multiplier == doctest::Approx(1e-6));
}

TEST_CASE("pairwise tree") {
  const std::vector<SubsetRun> pair{gaussian_run(0, v1(0.0), m1(1.0), 3000, 1), gaussian_run(1, v1(0.5), m1(1.0), 3000, 2)};
  RejectionConfig rc;
  rc.seed = 8;
  rc.output_draws = 1000;
  const auto p = pairwise_combine(pair, rc);
  const auto d = weierstrass_reject(pair, rc);
  CHECK(p.draws.values() == d.draws.values());

  const Dataset data = generate_bernoulli(10000, 0.1, 31);
  const Partition part = partition(data, 4, 3);
  const auto runs = beta_runs(data, part, 10000, 6);
  RejectionConfig rb;
  rb.seed = 4;
  rb.output_draws = 5000;
  const auto tree = pairwise_combine(runs, rb);
  CHECK(full_beta_tv(tree, data) <= 0.15);
  // Leaf count, then one entry per level.
  CHECK(tree.diagnostics.level_draws.size() == 3);
  for (std::size_t k = 1; k < tree.diagnostics.level_draws.size(); ++k)
    CHECK(tree.diagnostics.level_draws[k] <= tree.diagnostics.level_draws[k - 1]);

  RejectionConfig aligned;
  aligned.seed = 4;
  aligned.target_acceptance = 0.5;
  const auto al = pairwise_combine(runs, aligned);
  for (std::size_t k = 1; k < al.diagnostics.level_draws.size(); ++k)
    CHECK(al.diagnostics.level_draws[k] <= al.diagnostics.level_draws[k - 1]);

}

TEST_CASE("conditional weight") {
  const auto a = gaussian_draws(v1(0.0), m1(1.0), 4000, 1, names(1)).column(0);
  const auto b = gaussian_draws(v1(0.0), m1(1.0), 4000, 2, names(1)).column(0);
  const std::vector<std::span<const double>> single{a};
  CHECK(conditional_weight(single) == doctest::Approx(1.0).epsilon(1e-6));
  const std::vector<std::span<const double>> two{a, b};
  const double c = conditional_weight(two);
  CHECK(std::abs(c - 1.0 / (2.0 * std::sqrt(M_PI))) <= 0.03);
  std::vector<double> shifted = b;
  for (double& v : shifted) v += 3.0;
  const std::vector<std::span<const double>> apart{a, shifted};
  CHECK(conditional_weight(apart) < c);
  CHECK(conditional_log_weight(two) == doctest::Approx(std::log(c)));
}

TEST_CASE("sequential rejection") {
  SUBCASE("one coordinate gives uniform weights") {
    const GaussianSubsetsModel g({v1(0.0), v1(1.0)}, {m1(1.0), m1(1.0)});
    SequentialConfig sc;
    sc.replicas = 30;
    sc.n0 = 200;
    sc.seed = 5;
    const std::vector<SubsetRun> runs{gaussian_run(0, v1(0.0), m1(1.0), 500, 1), gaussian_run(1, v1(1.0), m1(1.0), 500, 2)};
    const auto r = sequential_reject(g, make_indexed_dataset(2), identity_partition(2), PriorFraction(2), sc, WorkerPool(2), runs);
    REQUIRE(r.weights);
    const auto& w = *r.weights;
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-10));
    for (double v : w) CHECK(v == doctest::Approx(1.0 / double(w.size())).epsilon(1e-9));
    REQUIRE(r.diagnostics.ess);
    CHECK(*r.diagnostics.ess > 0.0);
  }
  SUBCASE("independent Gaussian product") {
    Mat c1 = Mat::Zero(2, 2), c2 = Mat::Zero(2, 2);
    c1.diagonal() << 1.0, 0.5;
    c2.diagonal() << 0.5, 1.0;
    const std::vector<Vec> mus{(Vec(2) << 0.0, 1.0).finished(), (Vec(2) << 1.0, -1.0).finished()};
    const GaussianSubsetsModel g(mus, {c1, c2});
    const auto [mu, cov] = g.product_moments();
    SequentialConfig sc;
    sc.replicas = 200;
    sc.n0 = 300;
    sc.seed = 11;
    const std::vector<SubsetRun> runs{gaussian_run(0, mus[0], c1, 500, 3), gaussian_run(1, mus[1], c2, 500, 4)};
    const auto r = sequential_reject(g, make_indexed_dataset(2), identity_partition(2), PriorFraction(2), sc, WorkerPool(2), runs);
    REQUIRE(r.weights);
    const auto& w = *r.weights;
    const Vec mean = weighted_column_mean(r.draws, w);
    double w2 = 0.0;
    for (double v : w) w2 += v * v;
    for (Index j = 0; j < 2; ++j) {
      // Weighted MC se with the kernel-inflated spread of a single draw.
      double s2 = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) s2 += w[k] * std::pow(r.draws.values()(Index(k), j) - mean(j), 2);
      CHECK(std::abs(mean(j) - mu(j)) <= 3 * std::sqrt(s2 * w2));
    }
    const auto again = sequential_reject(g, make_indexed_dataset(2), identity_partition(2), PriorFraction(2), sc, WorkerPool(1), runs);
    CHECK(again.draws.values() == r.draws.values());
  }
  SequentialConfig bad;
  bad.n0 = 10;
  CHECK_THROWS_AS(bad.validate(), Error);
}
