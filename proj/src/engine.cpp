#include "wsampler/engine.hpp"

#include "wsampler/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace wsampler {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kChainLabel = 0xC4A1;
constexpr std::uint64_t kPartitionLabel = 0x9A27;

// Initial proposal covariance when no Laplace approximation is available.
Mat fallback_proposal_cov(const SubsetPosterior& post, const Vec& x) {
  if (auto h = post.hessian(x)) {
    const Mat neg = -*h;
    if (neg.allFinite() && is_spd(symmetrize(neg))) return spd_inverse(neg);
  }
  Mat c = Mat::Zero(x.size(), x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double s = 0.1 * (1.0 + std::abs(x(j)));
    c(j, j) = s * s;
  }
  return c;
}

class Welford {
 public:
  explicit Welford(Index d) : mean_(Vec::Zero(d)), m2_(Mat::Zero(d, d)), delta_(d) {}

  void add(const Vec& x) {
    ++n_;
    delta_ = x - mean_;
    mean_ += delta_ / static_cast<double>(n_);
    m2_.noalias() += delta_ * (x - mean_).transpose();
  }
  Index count() const noexcept { return n_; }
  Mat cov() const { return symmetrize(m2_ / static_cast<double>(n_ - 1)); }

 private:
  Index n_ = 0;
  Vec mean_;
  Mat m2_;
  Vec delta_;
};

}  // namespace

// ------------------------------------------------------------- partition

Dataset Partition::subset(const Dataset& data, Index id) const {
  require(id >= 0 && id < m, Errc::invalid_argument, "subset id out of range");
  require(data.n() == n(), Errc::dimension_mismatch, "partition does not match the dataset");
  return data.subset(members[static_cast<std::size_t>(id)]);
}

Partition partition(Index n, Index m, std::uint64_t seed) {
  require(m >= 1, Errc::invalid_argument, "partition needs m >= 1");
  require(m <= n, Errc::invalid_argument,
          "cannot split " + std::to_string(n) + " rows into " + std::to_string(m) + " subsets");
  Rng rng = Rng::stream(seed, {kPartitionLabel});
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.index(i + 1)]);
  }
  Partition p;
  p.m = m;
  p.seed = seed;
  p.assignment.assign(static_cast<std::size_t>(n), 0);
  p.members.resize(static_cast<std::size_t>(m));
  const Index base = n / m, extra = n % m;
  std::size_t pos = 0;
  for (Index s = 0; s < m; ++s) {
    const Index size = base + (s < extra ? 1 : 0);
    auto& rows = p.members[static_cast<std::size_t>(s)];
    rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                perm.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(size)));
    pos += static_cast<std::size_t>(size);
    std::sort(rows.begin(), rows.end());
    for (Index r : rows) p.assignment[static_cast<std::size_t>(r)] = s;
  }
  return p;
}

Partition partition(const Dataset& data, Index m, std::uint64_t seed) {
  return partition(data.n(), m, seed);
}

// ---------------------------------------------------------------- config

const char* proposal_name(Proposal p) noexcept {
  switch (p) {
    case Proposal::adaptive_rw: return "adaptive-rw";
    case Proposal::gibbs: return "gibbs";
    case Proposal::exact: return "exact";
  }
  return "unknown";
}

void ChainConfig::validate() const {
  require(iterations >= 1, Errc::invalid_argument, "chain iterations must be positive");
  require(burnin >= 0 && burnin < iterations, Errc::invalid_argument,
          "burn-in must be smaller than the iteration count");
  require(thin >= 1, Errc::invalid_argument, "thin must be at least 1");
  require(retained() >= 1, Errc::invalid_argument, "chain retains no draws");
  require(adapt_target > 0.0 && adapt_target < 1.0, Errc::invalid_argument,
          "adapt_target must lie in (0, 1)");
  if (initial) require(initial->allFinite(), Errc::non_finite, "initial point is not finite");
}

// --------------------------------------------------------------- Laplace

LaplaceApprox laplace(const SubsetPosterior& post, std::optional<Vec> start,
                      Index max_iterations) {
  require(post.has_log_density() && post.hessian(post.initial_point()).has_value() &&
              post.gradient(post.initial_point()).has_value(),
          Errc::unsupported, "laplace needs an analytic gradient and Hessian");
  Vec x = start ? *start : post.initial_point();
  double lp = post.log_density(x);
  require(std::isfinite(lp), Errc::non_finite, "laplace: log density is not finite at the start");
  const Index d = x.size();
  Index it = 0;
  bool converged = false;
  for (; it < max_iterations; ++it) {
    const Vec g = *post.gradient(x);
    Mat neg = -*post.hessian(x);
    require(g.allFinite() && neg.allFinite(), Errc::non_finite,
            "laplace: non-finite gradient or Hessian");
    Eigen::LLT<Mat> llt(symmetrize(neg));
    double damping = 0.0;
    while (llt.info() != Eigen::Success) {
      // Far from the mode: damp the step toward gradient ascent.
      damping = damping == 0.0 ? 1e-6 * std::max(1.0, neg.diagonal().cwiseAbs().maxCoeff())
                               : damping * 10.0;
      llt.compute(symmetrize(neg) + damping * Mat::Identity(d, d));
      require(damping < 1e300, Errc::non_convergence, "laplace: cannot regularize the Hessian");
    }
    const Vec step = llt.solve(g);
    const double decrement2 = g.dot(step);
    if (damping == 0.0 && std::sqrt(std::max(decrement2, 0.0)) <= 1e-6) {
      converged = true;
      break;
    }
    double t = 1.0;
    Vec trial = x + step;
    double lt = post.log_density(trial);
    while (!(std::isfinite(lt) && lt >= lp + 1e-4 * t * decrement2) && t > 1e-12) {
      t *= 0.5;
      trial = x + t * step;
      lt = post.log_density(trial);
    }
    if (!(std::isfinite(lt) && lt >= lp)) break;
    x = trial;
    lp = lt;
  }
  if (!converged) {
    fail(Errc::non_convergence,
         "laplace: Newton did not converge in " + std::to_string(max_iterations) + " iterations");
  }
  const Mat neg = -symmetrize(*post.hessian(x));
  require(is_spd(neg), Errc::indefinite_hessian, "laplace: Hessian is not negative definite");
  LaplaceApprox out;
  out.mode = x;
  out.cov = spd_inverse(neg);
  out.log_det = log_det_spd(out.cov);
  out.iterations = it;
  return out;
}

LaplaceApprox laplace(const Model& model, const Dataset& data, PriorFraction fraction) {
  return laplace(*model.bind(data, fraction));
}

// ------------------------------------------------------------ Metropolis

MetropolisResult metropolis(const SubsetPosterior& post, const Tether* tether, const Vec& init,
                            const Mat& proposal_chol, Index iterations, Rng& rng) {
  const Index d = init.size();
  MetropolisResult out;
  out.state = init;
  auto target = [&](const Vec& t) {
    const double lp = post.log_density(t);
    if (tether == nullptr || !std::isfinite(lp)) return lp;
    return lp + tether->log_factor(t);
  };
  out.log_density = target(out.state);
  Vec z(d), prop(d);
  for (Index it = 0; it < iterations; ++it) {
    for (Index j = 0; j < d; ++j) z(j) = rng.normal();
    prop = out.state;
    prop.noalias() += proposal_chol.triangularView<Eigen::Lower>() * z;
    const double lq = target(prop);
    if (std::log(rng.uniform()) < lq - out.log_density) {
      out.state.swap(prop);
      out.log_density = lq;
      ++out.accepted;
    }
  }
  return out;
}

// ----------------------------------------------------------------- chains

void refresh_moments(SubsetRun& run) {
  const Mat& v = run.draws.values();
  run.sample_mean = sample_mean(v);
  if (v.rows() < 2) {
    run.sample_cov = Mat::Identity(v.cols(), v.cols()) * 1e-12;
    run.cov_repaired = true;
    return;
  }
  Mat c = sample_cov(v);
  if (c.trace() <= 0.0) {
    run.sample_cov = Mat::Identity(v.cols(), v.cols()) * 1e-12;
    run.cov_repaired = true;
    return;
  }
  auto r = ridge_repair(c);
  run.sample_cov = std::move(r.cov);
  run.cov_repaired = r.repaired;
}

SubsetRun make_subset_run(Index subset_id, DrawMatrix draws) {
  SubsetRun run;
  run.subset_id = subset_id;
  run.draws = std::move(draws);
  refresh_moments(run);
  return run;
}

SubsetRun run_chain(const Model& model, const Dataset& subset, PriorFraction fraction,
                    const ChainConfig& config, Index subset_id) {
  config.validate();
  auto post = model.bind(subset, fraction);
  const Index d = post->dim();
  Rng rng = Rng::stream(config.seed, {kChainLabel, static_cast<std::uint64_t>(subset_id)});

  SubsetRun run;
  run.subset_id = subset_id;
  Mat out(config.retained(), d);
  Index kept = 0;
  auto keep = [&](Index it, const Vec& x) {
    if (it >= config.burnin && (it - config.burnin + 1) % config.thin == 0 &&
        kept < out.rows()) {
      out.row(kept++) = x.transpose();
    }
  };

  if (config.proposal == Proposal::gibbs) {
    auto kernel = post->gibbs();
    require(kernel != nullptr, Errc::unsupported, "model " + model.tag() + " has no Gibbs sampler");
    kernel->initialize(config.initial ? *config.initial : post->initial_point(), rng);
    for (Index it = 0; it < config.iterations; ++it) {
      kernel->sweep(rng, nullptr, 0);
      keep(it, kernel->parameters());
    }
    run.acceptance_rate = 1.0;
  } else if (config.proposal == Proposal::exact) {
    require(post->has_exact_sampler(), Errc::unsupported,
            "model " + model.tag() + " has no exact sampler");
    for (Index r = 0; r < out.rows(); ++r) out.row(r) = post->sample_exact(rng).transpose();
    kept = out.rows();
    run.acceptance_rate = 1.0;
  } else {
    require(post->has_log_density(), Errc::unsupported,
            "model " + model.tag() + " needs a Gibbs sampler");
    if (post->hessian(post->initial_point()).has_value()) {
      try {
        run.laplace = laplace(*post);
      } catch (const Error&) {
        run.laplace.reset();
      }
    }
    Vec x = config.initial ? *config.initial
                           : (run.laplace ? run.laplace->mode : post->initial_point());
    double lp = post->log_density(x);
    require(std::isfinite(lp), Errc::non_finite,
            "log posterior is not finite at the initial point");

    Mat base = run.laplace ? run.laplace->cov : fallback_proposal_cov(*post, x);
    Mat chol = cholesky_lower(ridge_repair(base).cov);
    double log_s = std::log(2.38 / std::sqrt(static_cast<double>(d)));
    const bool learn_cov = !run.laplace.has_value();
    Welford moments(d);
    const Index learn_from = config.burnin / 4;

    Vec z(d), prop(d);
    Index accepted_after = 0;
    for (Index it = 0; it < config.iterations; ++it) {
      const double s = std::exp(log_s);
      for (Index j = 0; j < d; ++j) z(j) = s * rng.normal();
      prop = x;
      prop.noalias() += chol.triangularView<Eigen::Lower>() * z;
      const double lq = post->log_density(prop);
      const double log_ratio = lq - lp;
      const bool accept = std::log(rng.uniform()) < log_ratio;
      if (accept) {
        x.swap(prop);
        lp = lq;
      }
      if (it < config.burnin) {
        const double alpha = std::isfinite(log_ratio) ? std::min(1.0, std::exp(log_ratio))
                                                      : (log_ratio > 0 ? 1.0 : 0.0);
        log_s += (alpha - config.adapt_target) / std::pow(1.0 + static_cast<double>(it) / 10.0, 0.6);
        if (learn_cov && it >= learn_from) {
          moments.add(x);
          if (moments.count() >= 100 && moments.count() % 100 == 0) {
            Mat c = moments.cov();
            if (c.allFinite() && c.trace() > 0.0) {
              try {
                chol = cholesky_lower(ridge_repair(c).cov);
              } catch (const Error&) {
                // keep the previous proposal
              }
            }
          }
        }
      } else if (accept) {
        ++accepted_after;
      }
      keep(it, x);
    }
    run.acceptance_rate =
        static_cast<double>(accepted_after) / static_cast<double>(config.iterations - config.burnin);
    run.proposal_scale = std::exp(log_s);
  }

  DrawMeta meta{model.tag(), "subset:" + std::to_string(subset_id + 1),
                "seed=" + std::to_string(config.seed) + "/subset=" +
                    std::to_string(subset_id + 1)};
  run.draws = DrawMatrix(std::move(out), model.parameter_names(), std::move(meta));
  refresh_moments(run);
  return run;
}

std::vector<SubsetRun> run_all_subsets(const Model& model, const Dataset& data,
                                       const Partition& part, PriorFraction fraction,
                                       const ChainConfig& config, const WorkerPool& pool) {
  std::vector<SubsetRun> runs(static_cast<std::size_t>(part.m));
  pool.parallel_for(runs.size(), [&](std::size_t i) {
    const auto id = static_cast<Index>(i);
    try {
      runs[i] = run_chain(model, part.subset(data, id), fraction, config, id);
    } catch (const Error& e) {
      throw Error(e.code(), "subset " + std::to_string(i + 1) + ": " + e.what());
    }
  });
  return runs;
}

// -------------------------------------------------------- tethered chains

TetheredSampler::TetheredSampler(std::unique_ptr<SubsetPosterior> post, const Mat& subset_cov,
                                 bool allow_exact)
    : post_(std::move(post)) {
  require(post_ != nullptr, Errc::invalid_argument, "tethered sampler needs a posterior");
  exact_ = allow_exact && post_->has_exact_tether();
  gibbs_ = !exact_ && !post_->has_log_density();
  if (!exact_ && !gibbs_) {
    require(subset_cov.rows() == post_->dim() && subset_cov.cols() == post_->dim(),
            Errc::dimension_mismatch, "subset covariance has the wrong shape");
    subset_precision_ = spd_inverse(ridge_repair(subset_cov).cov);
  }
}

Vec TetheredSampler::run(const Vec& anchor, const Bandwidth& h, Index iterations, const Vec& init,
                         Rng& rng) const {
  require(h.dim() == post_->dim() && anchor.size() == post_->dim(), Errc::dimension_mismatch,
          "tether dimension differs from the subset posterior");
  if (exact_) return post_->sample_tethered(anchor, h.covariance(), rng);
  require(iterations >= 1, Errc::invalid_argument, "tethered chain needs at least one iteration");
  const Tether tether{anchor, h.precision()};
  if (gibbs_) {
    auto kernel = post_->gibbs();
    require(kernel != nullptr, Errc::unsupported, "subset posterior has no sampler for tethering");
    kernel->initialize(init, rng);
    for (Index it = 0; it < iterations; ++it) kernel->sweep(rng, &tether, 0);
    return kernel->parameters();
  }
  const double d = static_cast<double>(post_->dim());
  const Mat prop_cov = (2.38 * 2.38 / d) * spd_inverse(subset_precision_ + tether.precision);
  return metropolis(*post_, &tether, init, cholesky_lower(prop_cov), iterations, rng).state;
}

Vec tethered_chain(const Model& model, const Dataset& subset, PriorFraction fraction,
                   const Vec& anchor, const Bandwidth& h, Index iterations, const Vec& init,
                   std::uint64_t seed, std::optional<Mat> subset_cov) {
  auto post = model.bind(subset, fraction);
  Mat cov;
  if (subset_cov) {
    cov = *subset_cov;
  } else if (post->has_log_density() && !post->has_exact_tether()) {
    Vec x = post->initial_point();
    try {
      cov = laplace(*post).cov;
    } catch (const Error&) {
      cov = fallback_proposal_cov(*post, x);
    }
  }
  TetheredSampler sampler(std::move(post), cov);
  Rng rng(seed);
  return sampler.run(anchor, h, iterations, init, rng);
}

}  // namespace wsampler
