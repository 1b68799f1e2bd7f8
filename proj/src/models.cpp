#include "wsampler/models.hpp"

#include "wsampler/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace wsampler {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.9189385332046728;

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

Index subset_id(const Dataset& d, Index count) {
  require(d.n() == 1, Errc::invalid_argument, "indexed subset must hold exactly one row");
  const double v = d.y(0);
  const auto id = static_cast<Index>(std::llround(v));
  require(static_cast<double>(id) == v && id >= 0 && id < count, Errc::invalid_argument,
          "indexed subset id out of range");
  return id;
}

// ------------------------------------------------------------- logistic

class LogisticPosterior final : public SubsetPosterior {
 public:
  LogisticPosterior(const Dataset& d, double prior_sd, PriorFraction f)
      : design_(d.n(), d.x.cols() + 1), y_(d.y) {
    design_.col(0).setOnes();
    design_.rightCols(d.x.cols()) = d.x;
    prior_precision_ = f.power() / (prior_sd * prior_sd);
  }

  Index dim() const override { return design_.cols(); }

  double log_density(const Vec& theta) const override {
    thread_local Vec eta;
    eta.noalias() = design_ * theta;
    double ll = 0.0;
    for (Index i = 0; i < eta.size(); ++i) ll += y_(i) * eta(i) - softplus(eta(i));
    return ll - 0.5 * prior_precision_ * theta.squaredNorm();
  }

  std::optional<Vec> gradient(const Vec& theta) const override {
    Vec r = design_ * theta;
    for (Index i = 0; i < r.size(); ++i) r(i) = y_(i) - sigmoid(r(i));
    Vec g = design_.transpose() * r;
    g -= prior_precision_ * theta;
    return g;
  }

  std::optional<Mat> hessian(const Vec& theta) const override {
    Vec eta = design_ * theta;
    Vec w(eta.size());
    for (Index i = 0; i < eta.size(); ++i) {
      const double s = sigmoid(eta(i));
      w(i) = s * (1.0 - s);
    }
    Mat h = -(design_.transpose() * w.asDiagonal() * design_);
    h.diagonal().array() -= prior_precision_;
    return h;
  }

  Vec initial_point() const override { return Vec::Zero(dim()); }

 private:
  Mat design_;
  Vec y_;
  double prior_precision_ = 0.0;
};

// -------------------------------------------------------- Beta-Bernoulli

class BetaPosterior final : public SubsetPosterior {
 public:
  explicit BetaPosterior(BetaParams p) : p_(p) {}

  Index dim() const override { return 1; }

  double log_density(const Vec& theta) const override {
    const double t = theta(0);
    if (!(t > 0.0 && t < 1.0)) return kNegInf;
    return (p_.a - 1.0) * std::log(t) + (p_.b - 1.0) * std::log1p(-t);
  }

  std::optional<Vec> gradient(const Vec& theta) const override {
    const double t = theta(0);
    Vec g(1);
    g(0) = (p_.a - 1.0) / t - (p_.b - 1.0) / (1.0 - t);
    return g;
  }

  std::optional<Mat> hessian(const Vec& theta) const override {
    const double t = theta(0);
    Mat h(1, 1);
    h(0, 0) = -(p_.a - 1.0) / (t * t) - (p_.b - 1.0) / ((1.0 - t) * (1.0 - t));
    return h;
  }

  Vec initial_point() const override {
    Vec v(1);
    v(0) = (p_.a > 1.0 && p_.b > 1.0) ? (p_.a - 1.0) / (p_.a + p_.b - 2.0)
                                        : p_.a / (p_.a + p_.b);
    return v;
  }

  bool has_exact_sampler() const override { return true; }
  Vec sample_exact(Rng& rng) const override {
    Vec v(1);
    v(0) = rng.beta(p_.a, p_.b);
    return v;
  }

 private:
  BetaParams p_;
};

// --------------------------------------------------------------- mixture

struct ComponentStats {
  std::array<double, MixtureModel::kComponents> count{};
  std::array<double, MixtureModel::kComponents> sum{};
};

ComponentStats component_stats(const MixtureState& s, const Dataset& d) {
  ComponentStats st;
  for (Index i = 0; i < d.n(); ++i) {
    const auto k = static_cast<std::size_t>(s.allocations[static_cast<std::size_t>(i)]);
    st.count[k] += 1.0;
    st.sum[k] += d.y(i);
  }
  return st;
}

std::pair<double, double> mean_conditional_from(const MixtureModel& model, int k,
                                                const ComponentStats& st, const Vec& means,
                                                PriorFraction f, const Tether* tether) {
  const double sd = model.component_sd();
  const double tau = model.mean_prior_sd();
  double prec = f.power() / (tau * tau) + st.count[static_cast<std::size_t>(k)] / (sd * sd);
  double lin = f.power() / (tau * tau) * model.mean_prior_mean() +
               st.sum[static_cast<std::size_t>(k)] / (sd * sd);
  if (tether != nullptr) {
    const Mat& p = tether->precision;
    prec += p(k, k);
    lin += p(k, k) * tether->anchor(k);
    for (int l = 0; l < MixtureModel::kComponents; ++l) {
      if (l != k) lin -= p(k, l) * (means(l) - tether->anchor(l));
    }
  }
  return {lin / prec, 1.0 / prec};
}

void sample_allocations(const MixtureModel& model, MixtureState& s, const Dataset& d, Rng& rng) {
  constexpr int K = MixtureModel::kComponents;
  const double inv2var = 0.5 / (model.component_sd() * model.component_sd());
  std::array<double, K> logw{};
  for (int k = 0; k < K; ++k) logw[static_cast<std::size_t>(k)] = std::log(s.weights(k));
  s.allocations.resize(static_cast<std::size_t>(d.n()));
  for (Index i = 0; i < d.n(); ++i) {
    std::array<double, K> lp{};
    double mx = kNegInf;
    for (int k = 0; k < K; ++k) {
      const double r = d.y(i) - s.means(k);
      lp[static_cast<std::size_t>(k)] = logw[static_cast<std::size_t>(k)] - inv2var * r * r;
      mx = std::max(mx, lp[static_cast<std::size_t>(k)]);
    }
    double total = 0.0;
    for (auto& v : lp) {
      v = std::exp(v - mx);
      total += v;
    }
    double u = rng.uniform() * total;
    int pick = K - 1;
    for (int k = 0; k < K; ++k) {
      u -= lp[static_cast<std::size_t>(k)];
      if (u <= 0.0) {
        pick = k;
        break;
      }
    }
    s.allocations[static_cast<std::size_t>(i)] = pick;
  }
}

void sample_weights(const MixtureModel& model, MixtureState& s, const ComponentStats& st,
                    PriorFraction f, Rng& rng) {
  const double alpha = (model.dirichlet_alpha() - 1.0) * f.power() + 1.0;
  double total = 0.0;
  for (int k = 0; k < MixtureModel::kComponents; ++k) {
    s.weights(k) = rng.gamma(alpha + st.count[static_cast<std::size_t>(k)]);
    total += s.weights(k);
  }
  s.weights /= total;
  // Guard log(0) in the next allocation sweep.
  for (int k = 0; k < MixtureModel::kComponents; ++k) {
    s.weights(k) = std::max(s.weights(k), 1e-300);
  }
}

void gibbs_sweep(const MixtureModel& model, MixtureState& s, const Dataset& d, PriorFraction f,
                 const Tether* tether, Rng& rng, Index first_free) {
  sample_allocations(model, s, d, rng);
  const ComponentStats st = component_stats(s, d);
  sample_weights(model, s, st, f, rng);
  for (int k = static_cast<int>(first_free); k < MixtureModel::kComponents; ++k) {
    const auto [mean, var] = mean_conditional_from(model, k, st, s.means, f, tether);
    s.means(k) = mean + std::sqrt(var) * rng.normal();
  }
}

class MixtureGibbs final : public GibbsKernel {
 public:
  MixtureGibbs(const MixtureModel& model, const Dataset& data, PriorFraction f)
      : model_(model), data_(data), f_(f) {}

  void initialize(const Vec& theta, Rng& rng) override {
    require(theta.size() == MixtureModel::kComponents, Errc::dimension_mismatch,
            "mixture state needs three means");
    state_.means = theta;
    state_.weights = Vec::Constant(MixtureModel::kComponents, 1.0 / MixtureModel::kComponents);
    sample_allocations(model_, state_, data_, rng);
    const ComponentStats st = component_stats(state_, data_);
    sample_weights(model_, state_, st, f_, rng);
  }

  void sweep(Rng& rng, const Tether* tether, Index first_free) override {
    gibbs_sweep(model_, state_, data_, f_, tether, rng, first_free);
  }

  Vec parameters() const override { return state_.means; }
  void set_parameters(const Vec& theta) override { state_.means = theta; }

 private:
  const MixtureModel& model_;
  const Dataset& data_;
  PriorFraction f_;
  MixtureState state_;
};

// The Gibbs kernel it hands out references this object; keep it alive while
// the kernel is in use.
class MixturePosterior final : public SubsetPosterior {
 public:
  MixturePosterior(Dataset d, PriorFraction f) : data_(std::move(d)), f_(f) {}

  Index dim() const override { return MixtureModel::kComponents; }
  bool has_log_density() const override { return false; }
  double log_density(const Vec&) const override {
    fail(Errc::unsupported, "mixture subset posterior has no closed-form marginal over weights");
  }

  Vec initial_point() const override {
    std::vector<double> x(data_.y.data(), data_.y.data() + data_.n());
    std::sort(x.begin(), x.end());
    Vec v(MixtureModel::kComponents);
    for (int k = 0; k < MixtureModel::kComponents; ++k) {
      const double q = (2.0 * k + 1.0) / (2.0 * MixtureModel::kComponents);
      v(k) = x[static_cast<std::size_t>(q * static_cast<double>(x.size() - 1))];
    }
    return v;
  }

  std::unique_ptr<GibbsKernel> gibbs() const override {
    return std::make_unique<MixtureGibbs>(model_, data_, f_);
  }

 private:
  MixtureModel model_;
  Dataset data_;
  PriorFraction f_;
};

// ------------------------------------------------------- analytic models

class Mixture1DPosterior final : public SubsetPosterior {
 public:
  explicit Mixture1DPosterior(NormalMixture1D mix) : mix_(std::move(mix)) {}

  Index dim() const override { return 1; }
  double log_density(const Vec& theta) const override { return mix_.log_pdf(theta(0)); }
  Vec initial_point() const override {
    Vec v(1);
    v(0) = 0.0;
    for (std::size_t c = 0; c < mix_.weights.size(); ++c) v(0) += mix_.weights[c] * mix_.means[c];
    return v;
  }
  bool has_exact_sampler() const override { return true; }
  Vec sample_exact(Rng& rng) const override {
    Vec v(1);
    v(0) = mix_.sample(rng);
    return v;
  }
  bool has_exact_tether() const override { return true; }
  Vec sample_tethered(const Vec& anchor, const Mat& h_cov, Rng& rng) const override {
    Vec v(1);
    v(0) = mix_.sample_tethered(anchor(0), std::sqrt(h_cov(0, 0)), rng);
    return v;
  }

 private:
  NormalMixture1D mix_;
};

class GaussianPosterior final : public SubsetPosterior {
 public:
  GaussianPosterior(Vec mean, const Mat& cov)
      : mean_(std::move(mean)), precision_(spd_inverse(cov)), chol_(cholesky_lower(cov)) {}

  Index dim() const override { return mean_.size(); }
  double log_density(const Vec& theta) const override {
    const Vec d = theta - mean_;
    return -0.5 * d.dot(precision_ * d);
  }
  std::optional<Vec> gradient(const Vec& theta) const override {
    return Vec(-(precision_ * (theta - mean_)));
  }
  std::optional<Mat> hessian(const Vec&) const override { return Mat(-precision_); }
  Vec initial_point() const override { return mean_; }

  bool has_exact_sampler() const override { return true; }
  Vec sample_exact(Rng& rng) const override {
    Vec z(dim());
    for (Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
    return mean_ + chol_ * z;
  }

  bool has_exact_tether() const override { return true; }
  Vec sample_tethered(const Vec& anchor, const Mat& h_cov, Rng& rng) const override {
    const Mat h_prec = spd_inverse(h_cov);
    const Mat cov = spd_inverse(precision_ + h_prec);
    const Vec mean = cov * (precision_ * mean_ + h_prec * anchor);
    const Mat l = cholesky_lower(cov);
    Vec z(dim());
    for (Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
    return mean + l * z;
  }

 private:
  Vec mean_;
  Mat precision_;
  Mat chol_;
};

}  // namespace

// ----------------------------------------------------------------- common

const char* schema_name(Schema s) noexcept {
  switch (s) {
    case Schema::logistic: return "logistic";
    case Schema::mixture: return "mixture";
    case Schema::bernoulli: return "bernoulli";
    case Schema::indexed: return "indexed";
  }
  return "unknown";
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  out.schema = schema;
  out.y.resize(static_cast<Index>(rows.size()));
  if (x.rows() > 0) out.x.resize(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index i = rows[r];
    require(i >= 0 && i < n(), Errc::invalid_argument, "subset row out of range");
    out.y(static_cast<Index>(r)) = y(i);
    if (x.rows() > 0) out.x.row(static_cast<Index>(r)) = x.row(i);
  }
  return out;
}

PriorFraction::PriorFraction(Index m_) : m(m_) {
  require(m >= 1, Errc::invalid_argument, "prior fraction denominator must be at least 1");
}

double Tether::log_factor(const Vec& t) const {
  const Vec d = t - anchor;
  return -0.5 * d.dot(precision * d);
}

Vec SubsetPosterior::sample_exact(Rng&) const {
  fail(Errc::unsupported, "no exact sampler for this subset posterior");
}

Vec SubsetPosterior::sample_tethered(const Vec&, const Mat&, Rng&) const {
  fail(Errc::unsupported, "no exact tethered sampler for this subset posterior");
}

Vec Model::prior_draw(Rng&) const {
  fail(Errc::unsupported, "model " + tag() + " has no prior sampler");
}

void Model::check_schema(const Dataset& d) const {
  if (d.schema != schema()) {
    fail(Errc::schema_mismatch, std::string("model ") + tag() + " expects a " +
                                    schema_name(schema()) + " dataset, got " +
                                    schema_name(d.schema));
  }
}

double log_posterior(const Model& model, const Vec& theta, const Dataset& subset,
                     PriorFraction fraction) {
  require(theta.allFinite(), Errc::non_finite, "log_posterior: non-finite parameter");
  require(theta.size() == model.dim(), Errc::dimension_mismatch,
          "log_posterior: parameter length differs from model dimension");
  return model.bind(subset, fraction)->log_density(theta);
}

// --------------------------------------------------------------- logistic

LogisticModel::LogisticModel(Index p, double prior_sd) : p_(p), prior_sd_(prior_sd) {
  require(p >= 1, Errc::invalid_argument, "logistic model needs at least one predictor");
  require(prior_sd > 0.0, Errc::invalid_argument, "prior sd must be positive");
}

std::vector<std::string> LogisticModel::parameter_names() const {
  std::vector<std::string> names;
  for (Index i = 0; i <= p_; ++i) names.push_back("beta" + std::to_string(i));
  return names;
}

double LogisticModel::log_prior(const Vec& theta) const {
  return -0.5 * theta.squaredNorm() / (prior_sd_ * prior_sd_);
}

Vec LogisticModel::prior_draw(Rng& rng) const {
  Vec v(p_ + 1);
  for (Index i = 0; i <= p_; ++i) v(i) = prior_sd_ * rng.normal();
  return v;
}

std::unique_ptr<SubsetPosterior> LogisticModel::bind(const Dataset& subset,
                                                     PriorFraction fraction) const {
  check_schema(subset);
  require(subset.x.cols() == p_ && subset.x.rows() == subset.n(), Errc::dimension_mismatch,
          "logistic design has the wrong shape");
  return std::make_unique<LogisticPosterior>(subset, prior_sd_, fraction);
}

LogisticData generate_logistic(Index n, Index p, double rho, std::uint64_t seed) {
  require(n >= 1 && p >= 1, Errc::invalid_argument, "generate_logistic needs n, p >= 1");
  require(rho >= 0.0 && rho < 1.0, Errc::invalid_argument, "rho must lie in [0, 1)");
  Rng coef_rng = Rng::stream(seed, {1});
  Rng x_rng = Rng::stream(seed, {2});
  Rng y_rng = Rng::stream(seed, {3});

  Vec beta = Vec::Zero(p + 1);
  beta(0) = 1.0;
  for (Index i = 10; i <= p; ++i) {
    const bool flip = coef_rng.uniform() < 0.6;
    const double mag = 1.0 + std::abs(coef_rng.normal());
    beta(i) = flip ? -mag : mag;
  }

  Dataset d;
  d.schema = Schema::logistic;
  d.x.resize(n, p);
  d.y.resize(n);
  const double a = std::sqrt(rho), b = std::sqrt(1.0 - rho);
  for (Index r = 0; r < n; ++r) {
    const double shared = x_rng.normal();
    for (Index j = 0; j < p; ++j) d.x(r, j) = a * shared + b * x_rng.normal();
  }
  for (Index r = 0; r < n; ++r) {
    const double eta = beta(0) + d.x.row(r).dot(beta.tail(p));
    d.y(r) = y_rng.uniform() < sigmoid(eta) ? 1.0 : 0.0;
  }
  return {std::move(d), std::move(beta)};
}

// --------------------------------------------------------- Beta-Bernoulli

BetaBernoulliModel::BetaBernoulliModel(double a, double b) : a_(a), b_(b) {
  require(a > 0.0 && b > 0.0, Errc::invalid_argument, "beta prior parameters must be positive");
}

double BetaBernoulliModel::log_prior(const Vec& theta) const {
  const double t = theta(0);
  if (!(t > 0.0 && t < 1.0)) return kNegInf;
  return (a_ - 1.0) * std::log(t) + (b_ - 1.0) * std::log1p(-t);
}

Vec BetaBernoulliModel::prior_draw(Rng& rng) const {
  Vec v(1);
  v(0) = std::clamp(rng.beta(a_, b_), 1e-12, 1.0 - 1e-12);
  return v;
}

BernoulliCounts bernoulli_counts(const Dataset& d) {
  BernoulliCounts c;
  c.trials = d.n();
  for (Index i = 0; i < d.n(); ++i) {
    require(d.y(i) == 0.0 || d.y(i) == 1.0, Errc::invalid_argument,
            "bernoulli outcomes must be 0 or 1");
    if (d.y(i) == 1.0) ++c.successes;
  }
  return c;
}

BetaParams beta_posterior_params(const BetaBernoulliModel& model, BernoulliCounts counts,
                                 PriorFraction fraction) {
  require(counts.successes >= 0 && counts.successes <= counts.trials, Errc::invalid_argument,
          "successes must lie in [0, trials]");
  const double inv = fraction.power();
  BetaParams p{(model.a() - 1.0) * inv + 1.0 + static_cast<double>(counts.successes),
               (model.b() - 1.0) * inv + 1.0 +
                   static_cast<double>(counts.trials - counts.successes)};
  require(p.a > 0.0 && p.b > 0.0, Errc::invalid_argument,
          "fractionated beta posterior parameters must be positive");
  return p;
}

double beta_log_pdf(double x, BetaParams p) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return (p.a - 1.0) * std::log(x) + (p.b - 1.0) * std::log1p(-x) + std::lgamma(p.a + p.b) -
         std::lgamma(p.a) - std::lgamma(p.b);
}

std::unique_ptr<SubsetPosterior> BetaBernoulliModel::bind(const Dataset& subset,
                                                          PriorFraction fraction) const {
  check_schema(subset);
  return std::make_unique<BetaPosterior>(
      beta_posterior_params(*this, bernoulli_counts(subset), fraction));
}

Dataset generate_bernoulli(Index n, double prob, std::uint64_t seed) {
  require(n >= 1, Errc::invalid_argument, "generate_bernoulli needs n >= 1");
  require(prob >= 0.0 && prob <= 1.0, Errc::invalid_argument, "probability must lie in [0, 1]");
  Rng rng = Rng::stream(seed, {4});
  Dataset d;
  d.schema = Schema::bernoulli;
  d.y.resize(n);
  for (Index i = 0; i < n; ++i) d.y(i) = rng.uniform() < prob ? 1.0 : 0.0;
  return d;
}

// ---------------------------------------------------------------- mixture

double MixtureModel::log_prior(const Vec& means) const {
  double s = 0.0;
  for (Index k = 0; k < means.size(); ++k) {
    const double z = (means(k) - mean_prior_mean()) / mean_prior_sd();
    s -= 0.5 * z * z;
  }
  return s;
}

Vec MixtureModel::prior_draw(Rng& rng) const {
  Vec v(kComponents);
  for (int k = 0; k < kComponents; ++k) v(k) = mean_prior_mean() + mean_prior_sd() * rng.normal();
  return v;
}

std::unique_ptr<SubsetPosterior> MixtureModel::bind(const Dataset& subset,
                                                    PriorFraction fraction) const {
  check_schema(subset);
  require(subset.n() >= 1, Errc::invalid_argument, "mixture subset is empty");
  return std::make_unique<MixturePosterior>(subset, fraction);
}

double MixtureModel::log_joint(const Vec& means, const Vec& weights, const Dataset& subset,
                               PriorFraction fraction) const {
  check_schema(subset);
  require(means.size() == kComponents && weights.size() == kComponents,
          Errc::dimension_mismatch, "mixture parameters need three components");
  double ll = 0.0;
  for (Index i = 0; i < subset.n(); ++i) {
    double mx = kNegInf;
    std::array<double, kComponents> lp{};
    for (int k = 0; k < kComponents; ++k) {
      lp[static_cast<std::size_t>(k)] =
          std::log(weights(k)) + normal_log_pdf(subset.y(i), means(k), component_sd());
      mx = std::max(mx, lp[static_cast<std::size_t>(k)]);
    }
    double s = 0.0;
    for (double v : lp) s += std::exp(v - mx);
    ll += mx + std::log(s);
  }
  double lw = 0.0;
  for (int k = 0; k < kComponents; ++k) lw += std::log(weights(k));
  return ll + fraction.power() * (log_prior(means) + (dirichlet_alpha() - 1.0) * lw);
}

std::pair<double, double> MixtureModel::mean_conditional(int k, const MixtureState& state,
                                                         const Dataset& subset,
                                                         PriorFraction fraction,
                                                         const Tether* tether) const {
  require(k >= 0 && k < kComponents, Errc::invalid_argument, "component index out of range");
  return mean_conditional_from(*this, k, component_stats(state, subset), state.means, fraction,
                               tether);
}

Vec MixtureModel::weight_conditional(const MixtureState& state, PriorFraction fraction) const {
  Vec a = Vec::Constant(kComponents, (dirichlet_alpha() - 1.0) * fraction.power() + 1.0);
  for (int z : state.allocations) a(z) += 1.0;
  return a;
}

MixtureState mixture_gibbs_step(const MixtureModel& model, MixtureState state,
                                const Dataset& subset, PriorFraction fraction,
                                const Tether* tether, Rng& rng, Index first_free) {
  model.bind(subset, fraction);  // schema check
  require(state.means.size() == MixtureModel::kComponents &&
              state.weights.size() == MixtureModel::kComponents,
          Errc::dimension_mismatch, "mixture state needs three components");
  gibbs_sweep(model, state, subset, fraction, tether, rng, first_free);
  return state;
}

Dataset generate_mixture(Index n, std::uint64_t seed) {
  require(n >= 1, Errc::invalid_argument, "generate_mixture needs n >= 1");
  Rng rng = Rng::stream(seed, {5});
  Dataset d;
  d.schema = Schema::mixture;
  d.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double mu = u < 0.5 ? 0.0 : (u < 0.75 ? 2.0 : 4.0);
    d.y(i) = mu + 0.5 * rng.normal();
  }
  return d;
}

// ------------------------------------------------------ 1-D normal mixtures

double NormalMixture1D::pdf(double x) const {
  double s = 0.0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    s += weights[c] * std::exp(normal_log_pdf(x, means[c], sds[c]));
  }
  return s;
}

double NormalMixture1D::log_pdf(double x) const {
  double mx = kNegInf;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    mx = std::max(mx, std::log(weights[c]) + normal_log_pdf(x, means[c], sds[c]));
  }
  double s = 0.0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    s += std::exp(std::log(weights[c]) + normal_log_pdf(x, means[c], sds[c]) - mx);
  }
  return mx + std::log(s);
}

double NormalMixture1D::second_derivative(double x) const {
  double s = 0.0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    const double z = (x - means[c]) / sds[c];
    s += weights[c] * std::exp(normal_log_pdf(x, means[c], sds[c])) * (z * z - 1.0) /
         (sds[c] * sds[c]);
  }
  return s;
}

double NormalMixture1D::sample(Rng& rng) const {
  double u = rng.uniform();
  std::size_t c = 0;
  for (; c + 1 < weights.size(); ++c) {
    u -= weights[c];
    if (u <= 0.0) break;
  }
  return means[c] + sds[c] * rng.normal();
}

double NormalMixture1D::sample_tethered(double anchor, double h, Rng& rng) const {
  require(h > 0.0, Errc::invalid_argument, "tether sd must be positive");
  const std::size_t k = weights.size();
  std::vector<double> logw(k);
  double mx = kNegInf;
  for (std::size_t c = 0; c < k; ++c) {
    logw[c] = std::log(weights[c]) +
              normal_log_pdf(anchor, means[c], std::sqrt(sds[c] * sds[c] + h * h));
    mx = std::max(mx, logw[c]);
  }
  double total = 0.0;
  for (auto& v : logw) {
    v = std::exp(v - mx);
    total += v;
  }
  double u = rng.uniform() * total;
  std::size_t c = 0;
  for (; c + 1 < k; ++c) {
    u -= logw[c];
    if (u <= 0.0) break;
  }
  const double prec = 1.0 / (sds[c] * sds[c]) + 1.0 / (h * h);
  const double mean = (means[c] / (sds[c] * sds[c]) + anchor / (h * h)) / prec;
  return mean + rng.normal() / std::sqrt(prec);
}

NormalMixture1D toy_mixture(ToyDensity which) {
  switch (which) {
    case ToyDensity::p1: return {{0.5, 0.5}, {-1.7, 0.8}, {0.5, 0.5}};
    case ToyDensity::p2: return {{0.5, 0.5}, {-1.3, 1.2}, {0.5, 0.5}};
    case ToyDensity::p12: {
      const double sd = 0.5 / std::sqrt(2.0);
      return {{0.5, 0.5}, {-1.5, 1.0}, {sd, sd}};
    }
  }
  fail(Errc::invalid_argument, "unknown toy density");
}

double toy_density(ToyDensity which, double theta) { return toy_mixture(which).pdf(theta); }

std::unique_ptr<SubsetPosterior> ToyBimodalModel::bind(const Dataset& subset,
                                                       PriorFraction) const {
  check_schema(subset);
  const Index id = subset_id(subset, 2);
  return std::make_unique<Mixture1DPosterior>(toy_mixture(id == 0 ? ToyDensity::p1
                                                                  : ToyDensity::p2));
}

// -------------------------------------------------------- Gaussian subsets

GaussianSubsetsModel::GaussianSubsetsModel(std::vector<Vec> means, std::vector<Mat> covs)
    : means_(std::move(means)), covs_(std::move(covs)) {
  require(!means_.empty() && means_.size() == covs_.size(), Errc::dimension_mismatch,
          "need one covariance per subset mean");
  const Index p = means_.front().size();
  for (std::size_t i = 0; i < means_.size(); ++i) {
    require(means_[i].size() == p && covs_[i].rows() == p && covs_[i].cols() == p,
            Errc::dimension_mismatch, "subset moments differ in dimension");
    require(is_spd(covs_[i]), Errc::not_spd, "subset covariance is not SPD");
  }
}

std::vector<std::string> GaussianSubsetsModel::parameter_names() const {
  std::vector<std::string> names;
  for (Index j = 0; j < means_.front().size(); ++j) names.push_back("theta" + std::to_string(j + 1));
  return names;
}

std::unique_ptr<SubsetPosterior> GaussianSubsetsModel::bind(const Dataset& subset,
                                                            PriorFraction) const {
  check_schema(subset);
  const Index id = subset_id(subset, subsets());
  return std::make_unique<GaussianPosterior>(mean(id), cov(id));
}

std::pair<Vec, Mat> GaussianSubsetsModel::product_moments() const {
  const Index p = means_.front().size();
  Mat prec = Mat::Zero(p, p);
  Vec lin = Vec::Zero(p);
  for (std::size_t i = 0; i < means_.size(); ++i) {
    const Mat pi = spd_inverse(covs_[i]);
    prec += pi;
    lin += pi * means_[i];
  }
  Mat cov = spd_inverse(prec);
  Vec mean = cov * lin;
  return {std::move(mean), std::move(cov)};
}

Dataset make_indexed_dataset(Index m) {
  require(m >= 1, Errc::invalid_argument, "indexed dataset needs at least one row");
  Dataset d;
  d.schema = Schema::indexed;
  d.y.resize(m);
  for (Index i = 0; i < m; ++i) d.y(i) = static_cast<double>(i);
  return d;
}

}  // namespace wsampler
