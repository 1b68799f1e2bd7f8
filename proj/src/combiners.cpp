#include "wsampler/combiners.hpp"

#include "wsampler/error.hpp"
#include "wsampler/kde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace wsampler {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kRejectLabel = 0x8E1E;
constexpr std::uint64_t kPilotLabel = 0x91A7;
constexpr std::uint64_t kRefineLabel = 0x2EF1;
constexpr std::uint64_t kSequentialLabel = 0x5E90;
constexpr std::uint64_t kKernelLabel = 0x4DE5;

void require_runs(std::span<const SubsetRun> runs) {
  require(!runs.empty(), Errc::invalid_argument, "no subset runs to combine");
  const Index d = runs.front().draws.dim();
  for (const auto& r : runs) {
    require(r.draws.dim() == d, Errc::dimension_mismatch, "subset runs differ in dimension");
  }
}

void require_equal_draws(std::span<const SubsetRun> runs) {
  for (const auto& r : runs) {
    require(r.draws.draws() == runs.front().draws.draws(), Errc::dimension_mismatch,
            "subset runs have unequal draw counts");
  }
}

DrawMeta combined_meta(std::span<const SubsetRun> runs, const std::string& method,
                       const std::string& lineage = {}) {
  return {runs.empty() ? std::string{} : runs.front().draws.meta().model_tag,
          "combined:" + method, lineage};
}

std::vector<Mat> draw_sets(std::span<const SubsetRun> runs) {
  std::vector<Mat> sets;
  sets.reserve(runs.size());
  for (const auto& r : runs) sets.push_back(r.draws.values());
  return sets;
}

// Per-coordinate Silverman scale with a floor for constant coordinates.
Vec silverman_scales(const Mat& set) {
  Vec h(set.cols());
  for (Index j = 0; j < set.cols(); ++j) {
    std::vector<double> col(set.rows());
    for (Index r = 0; r < set.rows(); ++r) col[static_cast<std::size_t>(r)] = set(r, j);
    double s = silverman_bandwidth(col);
    if (!(s > 0.0)) s = 1e-12 * (1.0 + std::abs(sample_mean_1d(col)));
    h(j) = s;
  }
  return h;
}

double log_accept_at(std::span<const Mat> sets, std::span<const Index> idx, std::size_t donor,
                     std::span<const Vec> inv_h, const KernelSpec& spec) {
  const Mat& d = sets[donor];
  const Index r = idx[donor];
  double s = 0.0;
  for (std::size_t l = 0; l < sets.size(); ++l) {
    if (l == donor) continue;
    const Index rl = idx[l];
    for (Index j = 0; j < d.cols(); ++j) {
      const double u = (sets[l](rl, j) - d(r, j)) * inv_h[l](j);
      s += spec.family == KernelFamily::gaussian ? -0.5 * u * u
                                                 : kernel_log_eval(spec, u) - spec.log_sup();
    }
  }
  return s;
}

std::vector<Vec> inverse(std::span<const Vec> h) {
  std::vector<Vec> out;
  out.reserve(h.size());
  for (const auto& v : h) {
    require((v.array() > 0.0).all() && v.allFinite(), Errc::invalid_argument,
            "rejection bandwidths must be positive");
    out.push_back(v.cwiseInverse());
  }
  return out;
}

std::vector<std::vector<double>> to_nested(std::span<const Vec> h) {
  std::vector<std::vector<double>> out;
  for (const auto& v : h) out.emplace_back(v.data(), v.data() + v.size());
  return out;
}

// Subset posterior restricted to coordinates first_free.. with the others pinned.
class PinnedPosterior final : public SubsetPosterior {
 public:
  PinnedPosterior(const SubsetPosterior& base, Vec full, Index first_free)
      : base_(base), full_(std::move(full)), first_(first_free) {}

  Index dim() const override { return full_.size() - first_; }
  double log_density(const Vec& free) const override {
    full_.tail(dim()) = free;
    return base_.log_density(full_);
  }
  Vec initial_point() const override { return full_.tail(dim()); }

 private:
  const SubsetPosterior& base_;
  mutable Vec full_;
  Index first_;
};

Mat subset_cov_hint(const SubsetPosterior& post, std::span<const SubsetRun> runs, Index i) {
  if (!runs.empty()) return runs[static_cast<std::size_t>(i)].sample_cov;
  if (post.has_log_density() && post.hessian(post.initial_point()).has_value()) {
    try {
      return laplace(post).cov;
    } catch (const Error&) {
    }
  }
  const Index d = post.dim();
  return Mat::Identity(d, d) * 1e-2;
}

}  // namespace

// -------------------------------------------------------------- baselines

CombineResult combine_simple_average(std::span<const SubsetRun> runs) {
  require_runs(runs);
  require_equal_draws(runs);
  Mat acc = Mat::Zero(runs.front().draws.draws(), runs.front().draws.dim());
  for (const auto& r : runs) acc += r.draws.values();
  acc /= static_cast<double>(runs.size());
  CombineResult out;
  out.draws = DrawMatrix(std::move(acc), runs.front().draws.names(),
                         combined_meta(runs, "simple_average"));
  out.diagnostics.method = "simple_average";
  return out;
}

CombineResult combine_weighted_average(std::span<const SubsetRun> runs) {
  require_runs(runs);
  require_equal_draws(runs);
  const Index d = runs.front().draws.dim();
  std::vector<Mat> prec;
  Mat total = Mat::Zero(d, d);
  for (const auto& r : runs) {
    prec.push_back(spd_inverse(ridge_repair(r.sample_cov).cov));
    total += prec.back();
  }
  const Mat total_inv = spd_inverse(total);
  Mat acc = Mat::Zero(runs.front().draws.draws(), d);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const Mat w = total_inv * prec[i];
    acc.noalias() += runs[i].draws.values() * w.transpose();
  }
  CombineResult out;
  out.draws = DrawMatrix(std::move(acc), runs.front().draws.names(),
                         combined_meta(runs, "weighted_average"));
  out.diagnostics.method = "weighted_average";
  return out;
}

CombineResult combine_kernel_marginal(std::span<const SubsetRun> runs, Index grid_points,
                                      std::uint64_t seed) {
  require_runs(runs);
  require(grid_points >= 16, Errc::invalid_argument, "kernel marginal needs at least 16 grid points");
  Index n = runs.front().draws.draws();
  for (const auto& r : runs) n = std::min(n, r.draws.draws());
  const Index d = runs.front().draws.dim();
  Mat out_draws(n, d);
  for (Index j = 0; j < d; ++j) {
    std::vector<std::vector<double>> cols;
    for (const auto& r : runs) cols.push_back(r.draws.column(j));
    std::vector<std::span<const double>> sets(cols.begin(), cols.end());
    auto prod = zoomed_log_kde_product(sets, static_cast<std::size_t>(grid_points));
    const double mx = *std::max_element(prod.log_values.begin(), prod.log_values.end());
    std::vector<double> v(prod.log_values.size());
    for (std::size_t g = 0; g < v.size(); ++g) v[g] = std::exp(prod.log_values[g] - mx);
    GridDensity dens(std::move(prod.grid), std::move(v));
    Rng rng = Rng::stream(seed, {kKernelLabel, static_cast<std::uint64_t>(j)});
    for (Index k = 0; k < n; ++k) out_draws(k, j) = dens.sample(rng);
  }
  CombineResult out;
  out.draws = DrawMatrix(std::move(out_draws), runs.front().draws.names(),
                         combined_meta(runs, "kernel", "seed=" + std::to_string(seed)));
  out.diagnostics.method = "kernel";
  return out;
}

DrawMatrix gaussian_draws(const Vec& mean, const Mat& cov, Index n, std::uint64_t seed,
                          std::vector<std::string> names, DrawMeta meta) {
  require(n >= 1, Errc::invalid_argument, "need at least one draw");
  require(cov.rows() == mean.size() && cov.cols() == mean.size(), Errc::dimension_mismatch,
          "covariance shape differs from the mean");
  const Mat l = cholesky_lower(cov);
  Rng rng(seed);
  Mat out(n, mean.size());
  Vec z(mean.size());
  for (Index k = 0; k < n; ++k) {
    for (Index j = 0; j < z.size(); ++j) z(j) = rng.normal();
    out.row(k) = (mean + l * z).transpose();
  }
  return DrawMatrix(std::move(out), std::move(names), std::move(meta));
}

CombineResult combine_laplace(const LaplaceApprox& approx, Index n, std::uint64_t seed,
                              std::vector<std::string> names) {
  CombineResult out;
  out.draws = gaussian_draws(approx.mode, approx.cov, n, seed, std::move(names),
                             {"", "combined:laplace", "seed=" + std::to_string(seed)});
  out.diagnostics.method = "laplace";
  return out;
}

// ------------------------------------------------------------- refinement

CombineResult weierstrass_refine(const Model& model, const Dataset& data, const Partition& part,
                                 PriorFraction fraction, const DrawMatrix& init,
                                 const BandwidthSchedule& schedule, const RefineConfig& config,
                                 const WorkerPool& pool, std::span<const SubsetRun> runs) {
  require(init.draws() >= 1, Errc::invalid_argument, "refinement needs initial draws");
  require(init.dim() == model.dim() && schedule.base().dim() == model.dim(),
          Errc::dimension_mismatch, "refinement dimensions disagree with the model");
  require(config.inner_iterations >= 1, Errc::invalid_argument,
          "refinement needs at least one inner iteration");
  require(runs.empty() || static_cast<Index>(runs.size()) == part.m, Errc::dimension_mismatch,
          "one subset run per subset is required");
  const auto m = static_cast<std::size_t>(part.m);
  const Index n = init.draws();
  const Index d = init.dim();

  std::vector<std::unique_ptr<TetheredSampler>> samplers(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto post = model.bind(part.subset(data, static_cast<Index>(i)), fraction);
    Mat hint;
    if (post->has_log_density() && !post->has_exact_tether()) {
      hint = subset_cov_hint(*post, runs, static_cast<Index>(i));
    }
    samplers[i] = std::make_unique<TetheredSampler>(std::move(post), hint);
  }

  Mat theta = init.values();
  std::vector<Mat> t(m, theta);
  CombineResult out;
  out.diagnostics.method = "refinement";
  for (std::size_t s = 0; s < schedule.steps(); ++s) {
    Bandwidth h = schedule.at(s);
    if (config.split == BandwidthSplit::aggregate) h = h.scaled(static_cast<double>(m));
    const std::vector<Bandwidth> hs(m, h);
    const ConditionalGaussianSampler cond(hs);
    out.diagnostics.schedule.push_back(schedule.multipliers()[s]);

    pool.parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
      const Vec anchor = theta.row(static_cast<Index>(k)).transpose();
      Mat tk(static_cast<Index>(m), d);
      for (std::size_t i = 0; i < m; ++i) {
        Rng rng = Rng::stream(config.seed, {kRefineLabel, s, i, k});
        const Vec prev = t[i].row(static_cast<Index>(k)).transpose();
        Vec next;
        try {
          next = samplers[i]->run(anchor, h, config.inner_iterations, prev, rng);
        } catch (const Error& e) {
          throw Error(e.code(), "refinement step " + std::to_string(s + 1) + ", subset " +
                                    std::to_string(i + 1) + ", draw " + std::to_string(k) +
                                    ": " + e.what());
        }
        t[i].row(static_cast<Index>(k)) = next.transpose();
        tk.row(static_cast<Index>(i)) = next.transpose();
      }
      Rng rng = Rng::stream(config.seed, {kRefineLabel, s, m, k});
      theta.row(static_cast<Index>(k)) = cond.draw(tk, rng).transpose();
    });

    if (config.keep_step_draws) out.step_draws.push_back(theta);
    if (config.step_metric) out.diagnostics.step_trace.push_back(config.step_metric(theta));
  }
  out.draws = DrawMatrix(std::move(theta), model.parameter_names(),
                         {model.tag(), "combined:refinement",
                          "seed=" + std::to_string(config.seed)});
  return out;
}

// --------------------------------------------------------------- rejection

void RejectionConfig::validate() const {
  require(target_acceptance.has_value() != !bandwidths.empty(), Errc::invalid_argument,
          "set exactly one of target_acceptance and explicit bandwidths");
  if (target_acceptance) {
    require(*target_acceptance > 0.0 && *target_acceptance < 1.0, Errc::invalid_argument,
            "target acceptance must lie in (0, 1)");
  }
  require(max_proposals >= 1, Errc::invalid_argument, "max_proposals must be positive");
  require(output_draws >= 0, Errc::invalid_argument, "output_draws must be non-negative");
  require(pilot_size >= 1, Errc::invalid_argument, "pilot_size must be positive");
}

double log_acceptance(const Mat& tuple, Index donor, std::span<const Vec> bandwidths,
                      const KernelSpec& spec) {
  require(static_cast<Index>(bandwidths.size()) == tuple.rows(), Errc::dimension_mismatch,
          "one bandwidth vector per subset is required");
  require(donor >= 0 && donor < tuple.rows(), Errc::invalid_argument, "donor out of range");
  double s = 0.0;
  for (Index l = 0; l < tuple.rows(); ++l) {
    if (l == donor) continue;
    for (Index j = 0; j < tuple.cols(); ++j) {
      const double u = (tuple(l, j) - tuple(donor, j)) / bandwidths[static_cast<std::size_t>(l)](j);
      s += kernel_log_eval(spec, u) - spec.log_sup();
    }
  }
  return s;
}

double pilot_acceptance(std::span<const Mat> sets, std::span<const Vec> bandwidths,
                        Index pilot_size, std::uint64_t seed, const KernelSpec& spec) {
  require(sets.size() == bandwidths.size(), Errc::dimension_mismatch,
          "one bandwidth vector per subset is required");
  const auto inv_h = inverse(bandwidths);
  Rng rng = Rng::stream(seed, {kPilotLabel});
  std::vector<Index> idx(sets.size());
  // Equal-length sets: subsample iterations k and use the k-th draw of every
  // set, as the per-iteration test does. Otherwise random tuples.
  bool aligned = true;
  for (const auto& s : sets) aligned = aligned && s.rows() == sets.front().rows();
  const Index rows = sets.front().rows();
  double total = 0.0;
  for (Index t = 0; t < pilot_size; ++t) {
    if (aligned) {
      const Index k = pilot_size >= rows ? t % rows
                                         : static_cast<Index>(rng.index(static_cast<std::uint64_t>(rows)));
      std::fill(idx.begin(), idx.end(), k);
    } else {
      for (std::size_t l = 0; l < sets.size(); ++l) {
        idx[l] = static_cast<Index>(rng.index(static_cast<std::uint64_t>(sets[l].rows())));
      }
    }
    double p = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      p += std::exp(log_accept_at(sets, idx, i, inv_h, spec));
    }
    total += p / static_cast<double>(sets.size());
  }
  return total / static_cast<double>(pilot_size);
}

Calibration calibrate_bandwidth(std::span<const Mat> sets, double target_acceptance,
                                Index pilot_size, std::uint64_t seed, const KernelSpec& spec) {
  require(!sets.empty(), Errc::invalid_argument, "calibration needs draw sets");
  require(target_acceptance > 0.0 && target_acceptance < 1.0, Errc::invalid_argument,
          "target acceptance must lie in (0, 1)");
  std::vector<Vec> base;
  for (const auto& s : sets) base.push_back(silverman_scales(s));
  auto scaled = [&](double lambda) {
    std::vector<Vec> h;
    for (const auto& b : base) h.push_back(lambda * b);
    return h;
  };
  auto ar = [&](double lambda) {
    auto h = scaled(lambda);
    return pilot_acceptance(sets, h, pilot_size, seed, spec);
  };
  double lo = std::log(1e-6), hi = std::log(1e3);
  Calibration c;
  const double ar_lo = ar(std::exp(lo));
  if (ar_lo >= target_acceptance) {
    c.bandwidths = scaled(std::exp(lo));
    c.multiplier = std::exp(lo);
    c.pilot_acceptance = ar_lo;
    c.saturated = true;
    return c;
  }
  const double ar_hi = ar(std::exp(hi));
  if (ar_hi < target_acceptance) {
    fail(Errc::unreachable_target,
         "target acceptance " + std::to_string(target_acceptance) +
             " is unreachable: pilot acceptance at the widest bandwidth is " +
             std::to_string(ar_hi));
  }
  double mid = 0.5 * (lo + hi), ar_mid = 0.0;
  for (c.steps = 0; c.steps < 40; ++c.steps) {
    mid = 0.5 * (lo + hi);
    ar_mid = ar(std::exp(mid));
    if (std::abs(ar_mid - target_acceptance) <= 0.01 * target_acceptance) break;
    if (ar_mid < target_acceptance) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  c.multiplier = std::exp(mid);
  c.bandwidths = scaled(c.multiplier);
  c.pilot_acceptance = ar_mid;
  return c;
}

Calibration calibrate_bandwidth(std::span<const SubsetRun> runs, double target_acceptance,
                                const KernelSpec& spec) {
  require_runs(runs);
  const auto sets = draw_sets(runs);
  return calibrate_bandwidth(sets, target_acceptance, 2000, 0, spec);
}

CombineResult weierstrass_reject(std::span<const Mat> sets, const RejectionConfig& config,
                                 const KernelSpec& spec, std::vector<std::string> names) {
  config.validate();
  require(!sets.empty(), Errc::invalid_argument, "rejection needs draw sets");
  const Index d = sets.front().cols();
  for (const auto& s : sets) {
    require(s.cols() == d && s.rows() >= 1, Errc::dimension_mismatch,
            "rejection draw sets differ in dimension or are empty");
  }
  if (names.empty()) {
    for (Index j = 0; j < d; ++j) names.push_back("theta" + std::to_string(j + 1));
  }
  CombineResult out;
  out.diagnostics.method = "rejection";
  const std::size_t m = sets.size();
  if (m == 1) {
    out.draws = DrawMatrix(sets.front(), std::move(names), {"", "combined:rejection", ""});
    out.diagnostics.acceptance_rate = 1.0;
    out.diagnostics.proposals = out.diagnostics.accepted = sets.front().rows();
    return out;
  }

  std::vector<Vec> h;
  if (config.target_acceptance) {
    auto c = calibrate_bandwidth(sets, *config.target_acceptance, config.pilot_size, config.seed,
                                 spec);
    h = std::move(c.bandwidths);
    out.diagnostics.bandwidth_multiplier = c.multiplier;
    out.diagnostics.saturated = c.saturated;
  } else {
    require(config.bandwidths.size() == m, Errc::dimension_mismatch,
            "one bandwidth vector per subset is required");
    h = config.bandwidths;
    for (const auto& v : h) {
      require(v.size() == d, Errc::dimension_mismatch, "bandwidth vector has the wrong length");
    }
  }
  const auto inv_h = inverse(h);
  out.diagnostics.bandwidths = to_nested(h);

  Rng rng = Rng::stream(config.seed, {kRejectLabel});
  std::vector<Index> idx(m);
  std::vector<Index> accepted_rows;
  std::vector<std::size_t> accepted_donor;
  Index proposals = 0;
  auto propose = [&] {
    const auto donor = static_cast<std::size_t>(rng.index(m));
    ++proposals;
    if (std::log(rng.uniform()) < log_accept_at(sets, idx, donor, inv_h, spec)) {
      accepted_rows.push_back(idx[donor]);
      accepted_donor.push_back(donor);
    }
  };
  if (config.output_draws == 0) {
    Index n = sets.front().rows();
    for (const auto& s : sets) n = std::min(n, s.rows());
    n = std::min(n, config.max_proposals);
    for (Index k = 0; k < n; ++k) {
      std::fill(idx.begin(), idx.end(), k);
      propose();
    }
  } else {
    while (static_cast<Index>(accepted_rows.size()) < config.output_draws &&
           proposals < config.max_proposals) {
      for (std::size_t l = 0; l < m; ++l) {
        idx[l] = static_cast<Index>(rng.index(static_cast<std::uint64_t>(sets[l].rows())));
      }
      propose();
    }
    if (static_cast<Index>(accepted_rows.size()) < config.output_draws) {
      out.diagnostics.notes.push_back("max_proposals reached before output_draws acceptances");
    }
  }
  if (accepted_rows.empty()) {
    fail(Errc::starvation,
         "rejection sampler accepted nothing in " + std::to_string(proposals) + " proposals");
  }
  Mat values(static_cast<Index>(accepted_rows.size()), d);
  for (std::size_t a = 0; a < accepted_rows.size(); ++a) {
    values.row(static_cast<Index>(a)) = sets[accepted_donor[a]].row(accepted_rows[a]);
  }
  out.diagnostics.proposals = proposals;
  out.diagnostics.accepted = static_cast<Index>(accepted_rows.size());
  out.diagnostics.acceptance_rate =
      static_cast<double>(accepted_rows.size()) / static_cast<double>(proposals);
  out.draws = DrawMatrix(std::move(values), std::move(names),
                         {"", "combined:rejection", "seed=" + std::to_string(config.seed)});
  return out;
}

CombineResult weierstrass_reject(std::span<const SubsetRun> runs, const RejectionConfig& config,
                                 const KernelSpec& spec) {
  require_runs(runs);
  const auto sets = draw_sets(runs);
  auto out = weierstrass_reject(sets, config, spec, runs.front().draws.names());
  out.draws.meta().model_tag = runs.front().draws.meta().model_tag;
  return out;
}

CombineResult pairwise_combine(std::span<const SubsetRun> runs, const RejectionConfig& config,
                               const KernelSpec& spec) {
  require_runs(runs);
  config.validate();
  require(config.bandwidths.empty(), Errc::invalid_argument,
          "pairwise combining calibrates every node; explicit bandwidths are not supported");
  std::vector<Mat> nodes = draw_sets(runs);
  CombineResult out;
  out.diagnostics.method = "pairwise";
  auto min_rows = [](const std::vector<Mat>& v) {
    Index n = v.front().rows();
    for (const auto& s : v) n = std::min(n, s.rows());
    return n;
  };
  out.diagnostics.level_draws.push_back(min_rows(nodes));
  Index proposals = 0, accepted = 0;
  std::uint64_t level = 0;
  while (nodes.size() > 1) {
    std::vector<Mat> next;
    Index level_prop = 0, level_acc = 0;
    for (std::size_t p = 0; p + 1 < nodes.size(); p += 2) {
      const std::uint64_t pair = p / 2;
      RejectionConfig node = config;
      node.seed = (level == 0 && pair == 0) ? config.seed
                                            : stream_key(config.seed, {level, pair});
      if (config.output_draws > 0) {
        node.output_draws =
            std::min(config.output_draws, std::min(nodes[p].rows(), nodes[p + 1].rows()));
      }
      const std::array<Mat, 2> pair_sets{nodes[p], nodes[p + 1]};
      CombineResult merged;
      try {
        merged = weierstrass_reject(pair_sets, node, spec, runs.front().draws.names());
      } catch (const Error& e) {
        throw Error(e.code(), "pairwise level " + std::to_string(level + 1) + ", pair " +
                                  std::to_string(pair + 1) + ": " + e.what());
      }
      if (merged.draws.draws() < config.min_level_draws) {
        fail(Errc::starvation,
             "pairwise level " + std::to_string(level + 1) + ", pair " + std::to_string(pair + 1) +
                 " kept " + std::to_string(merged.draws.draws()) + " draws, below the minimum " +
                 std::to_string(config.min_level_draws));
      }
      level_prop += merged.diagnostics.proposals;
      level_acc += merged.diagnostics.accepted;
      out.diagnostics.saturated = out.diagnostics.saturated || merged.diagnostics.saturated;
      next.push_back(merged.draws.values());
    }
    if (nodes.size() % 2 == 1) next.push_back(std::move(nodes.back()));
    nodes = std::move(next);
    out.diagnostics.level_acceptance.push_back(static_cast<double>(level_acc) /
                                               static_cast<double>(level_prop));
    out.diagnostics.level_draws.push_back(min_rows(nodes));
    proposals += level_prop;
    accepted += level_acc;
    ++level;
  }
  out.diagnostics.proposals = proposals;
  out.diagnostics.accepted = accepted;
  if (!out.diagnostics.level_acceptance.empty()) {
    const auto& la = out.diagnostics.level_acceptance;
    out.diagnostics.acceptance_rate =
        std::accumulate(la.begin(), la.end(), 0.0) / static_cast<double>(la.size());
  } else {
    out.diagnostics.acceptance_rate = 1.0;
  }
  out.draws = DrawMatrix(std::move(nodes.front()), runs.front().draws.names(),
                         combined_meta(runs, "rejection", "seed=" + std::to_string(config.seed)));
  return out;
}

// -------------------------------------------------------------- sequential

void SequentialConfig::validate() const {
  require(n0 >= 50, Errc::invalid_argument, "N0 must be at least 50");
  require(replicas >= 1, Errc::invalid_argument, "need at least one replica");
  require(burnin >= 0 && inner_iterations >= 1, Errc::invalid_argument,
          "invalid sequential chain settings");
  require(grid_points >= 16, Errc::invalid_argument, "grid_points must be at least 16");
  require(bandwidth_scale > 0.0, Errc::invalid_argument, "bandwidth_scale must be positive");
  require(max_proposals >= 1, Errc::invalid_argument, "max_proposals must be positive");
}

double conditional_log_weight(std::span<const std::span<const double>> draws,
                              Index grid_points) {
  require(!draws.empty(), Errc::invalid_argument, "conditional weight needs draw sets");
  for (auto s : draws) {
    require(!s.empty(), Errc::invalid_argument, "conditional weight got an empty draw set");
  }
  auto prod = zoomed_log_kde_product(draws, static_cast<std::size_t>(grid_points));
  const double mx = *std::max_element(prod.log_values.begin(), prod.log_values.end());
  std::vector<double> v(prod.log_values.size());
  for (std::size_t g = 0; g < v.size(); ++g) v[g] = std::exp(prod.log_values[g] - mx);
  const double integral = trapezoid(prod.grid, v);
  const double log_c = mx + std::log(integral);
  require(std::isfinite(log_c) && log_c > std::log(1e-300), Errc::disconnection,
          "conditional weight underflows: subset conditionals do not overlap");
  return log_c;
}

double conditional_weight(std::span<const std::span<const double>> draws, Index grid_points) {
  return std::exp(conditional_log_weight(draws, grid_points));
}

namespace {

struct ReplicaOutcome {
  bool ok = false;
  Vec theta;
  double log_weight = 0.0;
  std::vector<double> log_c;
  std::string failure;
};

// Per-subset chain state inside one replica.
struct SequentialChain {
  const SubsetPosterior* post = nullptr;
  std::unique_ptr<GibbsKernel> gibbs;
  Vec x;           // full parameter vector (Metropolis models)
  Mat precision;   // inverse subset covariance hint
};

std::vector<double> sequential_draws(SequentialChain& ch, Index j, const Vec& pinned,
                                     const SequentialConfig& cfg, Rng& rng) {
  std::vector<double> out(static_cast<std::size_t>(cfg.n0));
  if (ch.gibbs) {
    Vec cur = ch.gibbs->parameters();
    cur.head(j) = pinned.head(j);
    ch.gibbs->set_parameters(cur);
    for (Index it = 0; it < cfg.burnin; ++it) ch.gibbs->sweep(rng, nullptr, j);
    for (Index t = 0; t < cfg.n0; ++t) {
      for (Index it = 0; it < cfg.inner_iterations; ++it) ch.gibbs->sweep(rng, nullptr, j);
      out[static_cast<std::size_t>(t)] = ch.gibbs->parameters()(j);
    }
    return out;
  }
  const Index d = ch.x.size();
  ch.x.head(j) = pinned.head(j);
  PinnedPosterior pp(*ch.post, ch.x, j);
  const Index free = d - j;
  const Mat cond_cov = spd_inverse(ch.precision.bottomRightCorner(free, free));
  const Mat chol = cholesky_lower((2.38 * 2.38 / static_cast<double>(free)) * cond_cov);
  Vec state = ch.x.tail(free);
  if (!std::isfinite(pp.log_density(state))) {
    fail(Errc::non_finite, "subset conditional is not finite at the replica start");
  }
  state = metropolis(pp, nullptr, state, chol, cfg.burnin, rng).state;
  for (Index t = 0; t < cfg.n0; ++t) {
    state = metropolis(pp, nullptr, state, chol, cfg.inner_iterations, rng).state;
    out[static_cast<std::size_t>(t)] = state(0);
  }
  ch.x.tail(free) = state;
  return out;
}

}  // namespace

CombineResult sequential_reject(const Model& model, const Dataset& data, const Partition& part,
                                PriorFraction fraction, const SequentialConfig& config,
                                const WorkerPool& pool, std::span<const SubsetRun> runs) {
  config.validate();
  require(runs.empty() || static_cast<Index>(runs.size()) == part.m, Errc::dimension_mismatch,
          "one subset run per subset is required");
  const auto m = static_cast<std::size_t>(part.m);
  const Index p = model.dim();

  std::vector<std::unique_ptr<SubsetPosterior>> posts(m);
  std::vector<Mat> precisions(m);
  for (std::size_t i = 0; i < m; ++i) {
    posts[i] = model.bind(part.subset(data, static_cast<Index>(i)), fraction);
    if (posts[i]->has_log_density()) {
      precisions[i] = spd_inverse(
          ridge_repair(subset_cov_hint(*posts[i], runs, static_cast<Index>(i))).cov);
    }
  }

  std::vector<ReplicaOutcome> outcomes(static_cast<std::size_t>(config.replicas));
  pool.parallel_for(outcomes.size(), [&](std::size_t r) {
    ReplicaOutcome& res = outcomes[r];
    try {
      Rng init_rng = Rng::stream(config.seed, {kSequentialLabel, r, 0xFFFFu});
      Vec init;
      if (!runs.empty()) {
        const auto& run = runs[init_rng.index(m)];
        init = run.draws.values()
                   .row(static_cast<Index>(init_rng.index(static_cast<std::uint64_t>(run.draws.draws()))))
                   .transpose();
      } else {
        init = model.prior_draw(init_rng);
      }
      std::vector<SequentialChain> chains(m);
      for (std::size_t i = 0; i < m; ++i) {
        chains[i].post = posts[i].get();
        if (!posts[i]->has_log_density()) {
          chains[i].gibbs = posts[i]->gibbs();
          require(chains[i].gibbs != nullptr, Errc::unsupported,
                  "subset posterior has neither a density nor a Gibbs sampler");
          Rng rng = Rng::stream(config.seed, {kSequentialLabel, r, 0xFFFEu, i});
          chains[i].gibbs->initialize(init, rng);
        } else {
          chains[i].x = std::isfinite(posts[i]->log_density(init)) ? init
                                                                   : posts[i]->initial_point();
          chains[i].precision = precisions[i];
        }
      }
      Vec theta = Vec::Zero(p);
      std::vector<std::vector<double>> sets(m);
      for (Index j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
          Rng rng = Rng::stream(config.seed,
                                {kSequentialLabel, r, static_cast<std::uint64_t>(j), i});
          sets[i] = sequential_draws(chains[i], j, theta, config, rng);
        }
        std::vector<std::span<const double>> spans(sets.begin(), sets.end());
        res.log_c.push_back(conditional_log_weight(spans, config.grid_points));

        double hbar = 0.0;
        for (const auto& s : sets) hbar += silverman_bandwidth(s);
        hbar /= static_cast<double>(m);
        const double hj = config.bandwidth_scale * hbar / std::sqrt(static_cast<double>(m));
        double h = std::sqrt(static_cast<double>(m)) * hj;
        if (!(h > 0.0)) h = 1e-12 * (1.0 + std::abs(sets[0][0]));
        const double inv_h = 1.0 / h;

        Rng rng = Rng::stream(config.seed,
                              {kSequentialLabel, r, static_cast<std::uint64_t>(j), m});
        bool accepted = false;
        for (Index prop = 0; prop < config.max_proposals && !accepted; ++prop) {
          const auto donor = static_cast<std::size_t>(rng.index(m));
          const double x = sets[donor][rng.index(static_cast<std::uint64_t>(config.n0))];
          double la = 0.0;
          for (std::size_t l = 0; l < m; ++l) {
            const double y = sets[l][rng.index(static_cast<std::uint64_t>(config.n0))];
            if (l == donor) continue;
            const double u = (y - x) * inv_h;
            la -= 0.5 * u * u;
          }
          if (std::log(rng.uniform()) < la) {
            theta(j) = x;
            accepted = true;
          }
        }
        if (!accepted) {
          fail(Errc::starvation, "coordinate " + std::to_string(j + 1) + ": no acceptance in " +
                                     std::to_string(config.max_proposals) + " proposals");
        }
      }
      // C_0 does not depend on earlier coordinates, so it is common to all
      // replicas and cancels on normalization.
      res.log_weight = 0.0;
      for (std::size_t j = 1; j < res.log_c.size(); ++j) res.log_weight += res.log_c[j];
      res.theta = std::move(theta);
      res.ok = true;
    } catch (const Error& e) {
      res.ok = false;
      res.failure = "replica " + std::to_string(r) + ": " + e.what();
    }
  });

  CombineResult out;
  out.diagnostics.method = "sequential";
  std::vector<Index> good;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    if (outcomes[r].ok) {
      good.push_back(static_cast<Index>(r));
    } else {
      ++out.diagnostics.failed_replicas;
      out.diagnostics.notes.push_back(outcomes[r].failure);
    }
  }
  if (good.empty()) {
    fail(Errc::starvation, "sequential rejection: every replica failed (" +
                               outcomes.front().failure + ")");
  }
  Mat values(static_cast<Index>(good.size()), p);
  double mx = kNegInf;
  for (Index g : good) mx = std::max(mx, outcomes[static_cast<std::size_t>(g)].log_weight);
  std::vector<double> w(good.size());
  double total = 0.0;
  for (std::size_t a = 0; a < good.size(); ++a) {
    const auto& o = outcomes[static_cast<std::size_t>(good[a])];
    values.row(static_cast<Index>(a)) = o.theta.transpose();
    w[a] = std::exp(o.log_weight - mx);
    total += w[a];
    out.diagnostics.log_c.push_back(o.log_c);
  }
  for (auto& v : w) v /= total;
  out.diagnostics.ess = kish_ess(w);
  out.weights = std::move(w);
  out.draws = DrawMatrix(std::move(values), model.parameter_names(),
                         {model.tag(), "combined:sequential",
                          "seed=" + std::to_string(config.seed)});
  return out;
}

}  // namespace wsampler
