#include "wsampler/error.hpp"
#include "wsampler/evaluation.hpp"
#include "wsampler/kde.hpp"
#include "wsampler/kernel.hpp"
#include "wsampler/models.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace wsampler;

namespace {

Dataset bernoulli_data(Index n, Index s) {
  Dataset d;
  d.schema = Schema::bernoulli;
  d.y = Vec::Zero(n);
  for (Index i = 0; i < s; ++i) d.y(i) = 1.0;
  return d;
}

Vec scalar(double v) { return Vec::Constant(1, v); }

double sample_corr(const Vec& a, const Vec& b) {
  const double ma = a.mean(), mb = b.mean();
  const Vec da = a.array() - ma, db = b.array() - mb;
  return da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
}

}  // namespace

TEST_CASE("generate_logistic coefficient rule and correlation") {
  const auto g = generate_logistic(100, 5, 0.0, 7);
  REQUIRE(g.true_beta.size() == 6);
  CHECK(g.true_beta(0) == 1.0);
  for (Index i = 1; i <= 5; ++i) CHECK(g.true_beta(i) == 0.0);
  CHECK(g.data.x.rows() == 100);
  CHECK(g.data.x.cols() == 5);
  for (Index i = 0; i < g.data.y.size(); ++i) CHECK((g.data.y(i) == 0.0 || g.data.y(i) == 1.0));

  const auto big = generate_logistic(20, 30, 0.0, 3);
  for (Index i = 1; i < 10; ++i) CHECK(big.true_beta(i) == 0.0);
  for (Index i = 10; i <= 30; ++i) {
    const double a = std::abs(big.true_beta(i));
    CHECK(a >= 1.0);
  }

  const auto ind = generate_logistic(5000, 5, 0.0, 11);
  CHECK(std::abs(sample_corr(ind.data.x.col(0), ind.data.x.col(1))) <= 3.0 / std::sqrt(5000.0));
  const auto cor = generate_logistic(5000, 5, 0.3, 11);
  CHECK(std::abs(sample_corr(cor.data.x.col(0), cor.data.x.col(1)) - 0.3) <= 0.05);
  for (Index j = 0; j < 5; ++j) {
    const Vec c = cor.data.x.col(j);
    const double var = (c.array() - c.mean()).square().sum() / (c.size() - 1);
    CHECK(var == doctest::Approx(1.0).epsilon(0.08));
  }
  CHECK_THROWS_AS(generate_logistic(10, 2, 1.0, 1), Error);
  CHECK_THROWS_AS(generate_logistic(10, 2, -0.1, 1), Error);
}

TEST_CASE("generators are bit-deterministic") {
  const auto a = generate_logistic(300, 4, 0.5, 99);
  const auto b = generate_logistic(300, 4, 0.5, 99);
  CHECK(a.data.x == b.data.x);
  CHECK(a.data.y == b.data.y);
  CHECK(generate_mixture(500, 4).y == generate_mixture(500, 4).y);
  CHECK(generate_bernoulli(500, 0.2, 4).y == generate_bernoulli(500, 0.2, 4).y);
  CHECK_FALSE(generate_mixture(500, 4).y == generate_mixture(500, 5).y);
}

TEST_CASE("generate_mixture moments and modes") {
  const Dataset d = generate_mixture(10000, 21);
  CHECK(d.schema == Schema::mixture);
  // Mixture variance: E[x^2] - 1.5^2 with E[x^2] = 0.25 + 0.5*0 + 0.25*4 + 0.25*16.
  const double sd = std::sqrt(0.25 + 5.0 - 2.25);
  CHECK(std::abs(d.y.mean() - 1.5) <= 3.0 * sd / std::sqrt(10000.0));
  CHECK(d.y.minCoeff() > -4.0);
  CHECK(d.y.maxCoeff() < 8.0);
  // Histogram with 0.25-wide bins; local maxima near 0, 2 and 4.
  const double lo = -2.0, w = 0.25;
  std::vector<int> hist(32, 0);
  for (Index i = 0; i < d.y.size(); ++i) {
    const int b = static_cast<int>(std::floor((d.y(i) - lo) / w));
    if (b >= 0 && b < 32) ++hist[static_cast<std::size_t>(b)];
  }
  auto peak_near = [&](double c) {
    const int b = static_cast<int>(std::floor((c - lo) / w));
    int best = b;
    for (int k = b - 2; k <= b + 2; ++k)
      if (hist[static_cast<std::size_t>(k)] > hist[static_cast<std::size_t>(best)]) best = k;
    return lo + (best + 0.5) * w;
  };
  for (double c : {0.0, 2.0, 4.0}) CHECK(std::abs(peak_near(c) - c) <= 0.4);
  const int b1 = static_cast<int>((1.0 - lo) / w), b3 = static_cast<int>((3.0 - lo) / w);
  CHECK(hist[static_cast<std::size_t>(b1)] < hist[static_cast<std::size_t>((2.0 - lo) / w)]);
  CHECK(hist[static_cast<std::size_t>(b3)] < hist[static_cast<std::size_t>((4.0 - lo) / w)]);
}

TEST_CASE("beta_posterior_params") {
  const BetaBernoulliModel model;
  const auto p1 = beta_posterior_params(model, {3, 10}, PriorFraction(1));
  CHECK(p1.a == doctest::Approx(3.01));
  CHECK(p1.b == doctest::Approx(7.01));
  const auto p20 = beta_posterior_params(model, {0, 500}, PriorFraction(20));
  // (a - 1)/m + 1 with a = 0.01, m = 20.
  CHECK(p20.a == doctest::Approx(1.0 - 0.99 / 20.0));
  CHECK(p20.b == doctest::Approx(1.0 - 0.99 / 20.0 + 500.0));
  CHECK_THROWS_AS(beta_posterior_params(model, {11, 10}, PriorFraction(1)), Error);
  CHECK_THROWS_AS(BetaBernoulliModel(0.0, 1.0), Error);
  CHECK(bernoulli_counts(bernoulli_data(10, 3)).successes == 3);
  CHECK(bernoulli_counts(bernoulli_data(10, 3)).trials == 10);
}

TEST_CASE("beta_log_pdf matches Boost") {
  const BetaParams p{3.5, 12.25};
  boost::math::beta_distribution<> ref(p.a, p.b);
  for (double x : {0.01, 0.1, 0.3, 0.7, 0.99})
    CHECK(beta_log_pdf(x, p) == doctest::Approx(std::log(boost::math::pdf(ref, x))).epsilon(1e-12));
}

TEST_CASE("log_posterior for Beta-Bernoulli follows conjugate algebra") {
  const BetaBernoulliModel model;
  const Dataset d = bernoulli_data(40, 7);
  for (Index m : {1, 4}) {
    const PriorFraction f(m);
    auto oracle = [&](double t) {
      return (7 + (model.a() - 1) / m) * std::log(t) + (33 + (model.b() - 1) / m) * std::log(1 - t);
    };
    const double c = log_posterior(model, scalar(0.2), d, f) - oracle(0.2);
    for (double t : {0.05, 0.4, 0.8}) CHECK(log_posterior(model, scalar(t), d, f) - oracle(t) == doctest::Approx(c));
  }
  CHECK(std::isinf(log_posterior(model, scalar(1.5), d, PriorFraction(1))));
  CHECK_THROWS_AS(log_posterior(model, scalar(NAN), d, PriorFraction(1)), Error);
  Dataset wrong = d;
  wrong.schema = Schema::mixture;
  CHECK_THROWS_AS(log_posterior(model, scalar(0.2), wrong, PriorFraction(1)), Error);
}

TEST_CASE("subset log posteriors telescope to the full posterior") {
  const auto g = generate_logistic(120, 3, 0.2, 5);
  const LogisticModel model(3);
  const Index m = 4;
  std::vector<Dataset> parts;
  for (Index i = 0; i < m; ++i) {
    std::vector<Index> rows;
    for (Index r = i; r < 120; r += m) rows.push_back(r);
    parts.push_back(g.data.subset(rows));
  }
  Rng rng(17);
  for (int k = 0; k < 10; ++k) {
    Vec t(4);
    for (Index j = 0; j < 4; ++j) t(j) = rng.normal();
    double sum = 0.0;
    for (const auto& p : parts) sum += log_posterior(model, t, p, PriorFraction(m));
    CHECK(sum == doctest::Approx(log_posterior(model, t, g.data, PriorFraction(1))).epsilon(1e-10));
    double pri = 0.0;
    for (Index i = 0; i < m; ++i) pri += model.log_prior(t) / static_cast<double>(m);
    CHECK(pri == doctest::Approx(model.log_prior(t)).epsilon(1e-14));
  }
}

TEST_CASE("logistic log_posterior at zero and gradient") {
  const auto g = generate_logistic(200, 4, 0.0, 8);
  const LogisticModel model(4);
  const Vec zero = Vec::Zero(5);
  CHECK(log_posterior(model, zero, g.data, PriorFraction(3)) - model.log_prior(zero) / 3.0 ==
        doctest::Approx(200 * std::log(0.5)));
  const auto post = model.bind(g.data, PriorFraction(2));
  Rng rng(2);
  for (int k = 0; k < 10; ++k) {
    Vec t(5);
    for (Index j = 0; j < 5; ++j) t(j) = 0.5 * rng.normal();
    const auto grad = post->gradient(t);
    REQUIRE(grad);
    const double eps = 1e-5;
    for (Index j = 0; j < 5; ++j) {
      Vec a = t, b = t;
      a(j) += eps;
      b(j) -= eps;
      const double fd = (post->log_density(a) - post->log_density(b)) / (2 * eps);
      CHECK(std::abs(fd - (*grad)(j)) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
    const auto hess = post->hessian(t);
    if (hess) CHECK(hess->isApprox(hess->transpose()));
  }
}

TEST_CASE("fractionated Beta posteriors multiply to the full posterior") {
  const BetaBernoulliModel model;
  const Index m = 5;
  const std::vector<BernoulliCounts> counts{{3, 40}, {5, 40}, {2, 40}, {6, 40}, {4, 41}};
  BernoulliCounts total;
  for (const auto& c : counts) {
    total.successes += c.successes;
    total.trials += c.trials;
  }
  const auto full = beta_posterior_params(model, total, PriorFraction(1));
  const auto grid = uniform_grid(1e-4, 0.6, 4001);
  std::vector<double> prod(grid.size()), ref(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double s = 0.0;
    for (const auto& c : counts) s += beta_log_pdf(grid[k], beta_posterior_params(model, c, PriorFraction(m)));
    prod[k] = s;
    ref[k] = beta_log_pdf(grid[k], full);
  }
  // Ratio must be constant in theta.
  const double c0 = prod[2000] - ref[2000];
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) worst = std::max(worst, std::abs(std::expm1(prod[k] - ref[k] - c0)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("toy densities") {
  CHECK(toy_density(ToyDensity::p12, -1.5) == doctest::Approx(0.5642).epsilon(1e-3));
  const auto grid = uniform_grid(-6.0, 6.0, 24001);
  for (auto which : {ToyDensity::p1, ToyDensity::p2, ToyDensity::p12}) {
    std::vector<double> v(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) v[k] = toy_density(which, grid[k]);
    CHECK(std::abs(trapezoid(grid, v) - 1.0) <= 1e-8);
  }
  const GridDensity p1 = GridDensity::from_function([](double t) { return toy_density(ToyDensity::p1, t); }, -6, 6, 4096);
  const GridDensity p2 = GridDensity::from_function([](double t) { return toy_density(ToyDensity::p2, t); }, -6, 6, 4096);
  std::vector<double> prod(p1.grid().size());
  for (std::size_t k = 0; k < prod.size(); ++k) prod[k] = p1.values()[k] * p2.values()[k];
  const GridDensity pp(p1.grid(), prod);
  const GridDensity p12 = GridDensity::from_function([](double t) { return toy_density(ToyDensity::p12, t); }, -6, 6, 4096);
  CHECK(tv_distance(pp, p12) <= 0.01);
}

TEST_CASE("NormalMixture1D derivatives and tethered sampler") {
  const NormalMixture1D mix{{0.3, 0.7}, {-1.0, 2.0}, {0.5, 1.2}};
  for (double x : {-2.0, 0.0, 1.3}) {
    const double e = 1e-4;
    const double fd = (mix.pdf(x + e) - 2 * mix.pdf(x) + mix.pdf(x - e)) / (e * e);
    CHECK(mix.second_derivative(x) == doctest::Approx(fd).epsilon(1e-5));
    CHECK(mix.log_pdf(x) == doctest::Approx(std::log(mix.pdf(x))));
  }
  // Product with N(anchor, h^2) for a single component: conjugate normal oracle.
  const NormalMixture1D one{{1.0}, {1.0}, {0.5}};
  const double a = 2.0, h = 0.5;
  const double prec = 1 / 0.25 + 1 / (h * h);
  const double mean = (1.0 / 0.25 + a / (h * h)) / prec;
  Rng rng(4);
  double s = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) s += one.sample_tethered(a, h, rng);
  CHECK(std::abs(s / n - mean) <= 4.0 * std::sqrt(1 / prec / n));
}

TEST_CASE("mixture Gibbs conditionals") {
  const MixtureModel model;
  SUBCASE("data all at zero concentrates component one") {
    Dataset d;
    d.schema = Schema::mixture;
    d.y = Vec::Zero(1000);
    MixtureState st;
    st.allocations.assign(1000, 0);
    st.means = Vec::Constant(3, 2.0);
    st.weights = Vec::Constant(3, 1.0 / 3.0);
    const auto [mu, var] = model.mean_conditional(0, st, d, PriorFraction(1), nullptr);
    CHECK(std::abs(mu) < 0.1);
    // Conjugate normal-normal oracle.
    const double p = 1000 / 0.25 + 1 / 9.0;
    CHECK(var == doctest::Approx(1 / p));
    CHECK(mu == doctest::Approx((2.0 / 9.0) / p));
    // Empty component falls back to the prior.
    const auto [mu2, var2] = model.mean_conditional(1, st, d, PriorFraction(1), nullptr);
    CHECK(mu2 == doctest::Approx(2.0));
    CHECK(var2 == doctest::Approx(9.0));
  }
  SUBCASE("weights conditional") {
    MixtureState st;
    st.allocations.assign(1000, 0);
    for (int i = 500; i < 750; ++i) st.allocations[static_cast<std::size_t>(i)] = 1;
    for (int i = 750; i < 1000; ++i) st.allocations[static_cast<std::size_t>(i)] = 2;
    const Vec alpha = model.weight_conditional(st, PriorFraction(1));
    const Vec mean = alpha / alpha.sum();
    CHECK(std::abs(mean(0) - 0.5) <= 0.05);
    CHECK(std::abs(mean(1) - 0.25) <= 0.05);
    CHECK(std::abs(mean(2) - 0.25) <= 0.05);
  }
  SUBCASE("dominating tether pins the means; sweeps keep a valid state") {
    const Dataset d = generate_mixture(400, 3);
    Rng rng(9);
    MixtureState st;
    st.allocations.assign(400, 0);
    st.means = Vec::Zero(3);
    st.means << -1.0, 1.0, 3.0;
    st.weights = Vec::Constant(3, 1.0 / 3.0);
    Tether tether;
    tether.anchor = Vec::Zero(3);
    tether.anchor << 0.3, 2.2, 3.7;
    const double H = 1e-6;
    tether.precision = Mat::Identity(3, 3) / H;
    for (int k = 0; k < 5; ++k) {
      st = mixture_gibbs_step(model, st, d, PriorFraction(4), &tether, rng);
      for (int j = 0; j < 3; ++j) CHECK(std::abs(st.means(j) - tether.anchor(j)) <= 3 * std::sqrt(H));
      CHECK(st.weights.sum() == doctest::Approx(1.0));
      CHECK(st.weights.minCoeff() >= 0.0);
      for (int a : st.allocations) CHECK((a >= 0 && a < 3));
    }
    // first_free pins the leading coordinates.
    const Vec before = st.means;
    st = mixture_gibbs_step(model, st, d, PriorFraction(4), nullptr, rng, 2);
    CHECK(st.means(0) == before(0));
    CHECK(st.means(1) == before(1));
  }
}

TEST_CASE("gaussian subsets product moments") {
  const std::vector<Vec> means{Vec::Constant(1, 0.0), Vec::Constant(1, 4.0)};
  const std::vector<Mat> covs{Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, 4.0)};
  const GaussianSubsetsModel model(means, covs);
  const auto [mu, cov] = model.product_moments();
  CHECK(cov(0, 0) == doctest::Approx(0.8));
  CHECK(mu(0) == doctest::Approx(0.8));
  const Dataset idx = make_indexed_dataset(2);
  CHECK(idx.n() == 2);
  const auto post = model.bind(idx.subset(std::vector<Index>{1}), PriorFraction(2));
  boost::math::normal ref(4.0, 2.0);
  const double c = post->log_density(scalar(4.0)) - std::log(boost::math::pdf(ref, 4.0));
  CHECK(post->log_density(scalar(1.0)) - std::log(boost::math::pdf(ref, 1.0)) == doctest::Approx(c));
}
