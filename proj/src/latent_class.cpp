#include "msemark/latent_class.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <map>
#include <numbers>
#include <sstream>
#include <tuple>

#include "msemark/csv.hpp"
#include "msemark/errors.hpp"

namespace msemark {

namespace {

constexpr double kMissedProbabilityFloor = 1e-300;

double clamp_open_unit(double v) {
  if (v <= 0.0) return std::numeric_limits<double>::min();
  if (v >= 1.0) return std::nextafter(1.0, 0.0);
  return v;
}

double imputed_mark(double log_mark, bool rounded) {
  const double y = std::exp(log_mark);
  return rounded ? std::max(1.0, std::round(y)) : y;
}

}  // namespace

AlphaPrior AlphaPrior::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? std::string() : text.substr(colon + 1);
  if (kind == "fixed") {
    auto v = csv::parse_double(rest.empty() ? "1" : rest);
    if (!v || !(*v > 0.0)) throw ConfigError("bad fixed alpha '" + text + "'");
    return held_at(*v);
  }
  if (kind == "gamma") {
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw ConfigError("alpha prior '" + text + "' needs gamma:shape,rate");
    auto a = csv::parse_double(rest.substr(0, comma));
    auto b = csv::parse_double(rest.substr(comma + 1));
    if (!a || !b || !(*a > 0.0) || !(*b > 0.0)) throw ConfigError("bad gamma alpha prior '" + text + "'");
    return gamma(*a, *b);
  }
  throw ConfigError("unknown alpha prior '" + text + "' (expected fixed:<v> or gamma:<shape>,<rate>)");
}

std::string AlphaPrior::to_string() const {
  if (fixed) return "fixed:" + csv::format_exact(fixed_value);
  return "gamma:" + csv::format_exact(shape) + "," + csv::format_exact(rate);
}

void ModelConfig::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (K < 1) throw ConfigError("K must be at least 1");
  if (!positive(a_p) || !positive(b_p)) throw ConfigError("a_p and b_p must be positive");
  if (!positive(c0) || !positive(C0)) throw ConfigError("c0 and C0 must be positive");
  if (m0 && !std::isfinite(*m0)) throw ConfigError("m0 must be finite");
  if (s0_sq && !positive(*s0_sq)) throw ConfigError("s0_sq must be positive");
  if (alpha_prior.fixed ? !positive(alpha_prior.fixed_value)
                        : (!positive(alpha_prior.shape) || !positive(alpha_prior.rate)))
    throw ConfigError("alpha prior parameters must be positive");
  if (!positive(a_lambda)) throw ConfigError("a_lambda must be positive");
  if (!(b_lambda >= 0.0) || !std::isfinite(b_lambda)) throw ConfigError("b_lambda must be non-negative");
  if (!positive(log_mark_clamp)) throw ConfigError("log_mark_clamp must be positive");
}

void MCMCSettings::validate() const {
  if (iterations == 0) throw ConfigError("iterations must be positive");
  if (burn_in >= iterations) throw ConfigError("burn-in must be smaller than the number of iterations");
  if (thin < 1) throw ConfigError("thinning factor must be at least 1");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
    throw ConfigError("target acceptance must lie in (0, 1)");
  if (!(adapt_decay > 0.5 && adapt_decay <= 1.0)) throw ConfigError("adaptation decay must lie in (0.5, 1]");
}

std::size_t MCMCSettings::retained() const noexcept { return (iterations - burn_in) / thin; }

bool MCMCSettings::is_retained(std::size_t iteration) const noexcept {
  return iteration > burn_in && (iteration - burn_in) % thin == 0;
}

void ParameterState::check(std::size_t iteration) const {
  auto fail = [&](const std::string& what) {
    throw NumericalError("iteration " + std::to_string(iteration) + ": " + what);
  };
  for (Eigen::Index g = 0; g < pi.rows(); ++g) {
    const double s = pi.row(g).sum();
    if (!(std::abs(s - 1.0) <= 1e-10)) fail("weights of stratum " + std::to_string(g) + " sum to " + csv::format(s));
    if (!(alpha(g) > 0.0) || !std::isfinite(alpha(g))) fail("alpha of stratum " + std::to_string(g) + " not positive");
    if (!(lambda(g) > 0.0) || !std::isfinite(lambda(g))) fail("lambda of stratum " + std::to_string(g) + " not positive");
  }
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (!(p(k, j) > 0.0 && p(k, j) < 1.0))
        fail("capture probability of cluster " + std::to_string(k) + " list " + std::to_string(j) + " outside (0,1)");
    if (!(sigma2(k) > 0.0) || !std::isfinite(sigma2(k))) fail("sigma2 of cluster " + std::to_string(k) + " not positive");
    if (!std::isfinite(mu(k))) fail("mu of cluster " + std::to_string(k) + " not finite");
  }
}

Eigen::VectorXd nondetection_probabilities(const Eigen::MatrixXd& p) {
  Eigen::VectorXd q(p.rows());
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    double prod = 1.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) prod *= 1.0 - p(k, j);
    q(k) = prod;
  }
  return q;
}

double missed_probability(const Eigen::Ref<const Eigen::RowVectorXd>& pi_row, const Eigen::VectorXd& q) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < q.size(); ++k) s += pi_row(k) * q(k);
  return s;
}

DerivedQuantities derive(const Dataset& data, const ParameterState& params, const AugmentedState& aug) {
  DerivedQuantities out;
  const auto G = static_cast<Eigen::Index>(params.num_strata());
  out.q = nondetection_probabilities(params.p);
  out.p0.resize(G);
  for (Eigen::Index g = 0; g < G; ++g) out.p0(g) = missed_probability(params.pi.row(g), out.q);
  out.N_gk = aug.n0_by_cluster;
  for (std::size_t i = 0; i < data.size(); ++i)
    ++out.N_gk(static_cast<Eigen::Index>(data[i].stratum), static_cast<Eigen::Index>(aug.z[i]));
  out.N_k = out.N_gk.colwise().sum().transpose();
  return out;
}

std::vector<StratumFunctionals> functionals(const Dataset& data, const AugmentedState& aug,
                                            bool round_imputed_marks) {
  std::vector<StratumFunctionals> out(data.num_strata());
  for (std::size_t g = 0; g < out.size(); ++g) {
    auto& f = out[g];
    f.n0 = aug.n0[g];
    f.total_count = data.stratum_counts()[g] + f.n0;
    for (double x : aug.x0[g]) {
      f.missed_mark_sum += imputed_mark(x, round_imputed_marks);
      f.sum_x0 += x;
      f.sum_x0_sq += x * x;
    }
    f.total_mark = data.stratum_mark_sums()[g] + f.missed_mark_sum;
    f.missed_mean_mark =
        f.n0 > 0 ? f.missed_mark_sum / static_cast<double>(f.n0) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::vector<double> PosteriorDraws::pooled_missed_counts() const {
  std::vector<double> out(num_draws(), 0.0);
  for (std::size_t d = 0; d < num_draws(); ++d)
    for (std::size_t g = 0; g < num_strata(); ++g) out[d] += static_cast<double>(n0[at(d, g)]);
  return out;
}

std::vector<double> PosteriorDraws::pooled_missed_marks() const {
  std::vector<double> out(num_draws(), 0.0);
  for (std::size_t d = 0; d < num_draws(); ++d)
    for (std::size_t g = 0; g < num_strata(); ++g) out[d] += missed_mark_sum[at(d, g)];
  return out;
}

std::vector<double> PosteriorDraws::alpha_acceptance_rates() const {
  std::vector<double> out;
  for (std::size_t g = 0; g < alpha_proposed.size(); ++g)
    out.push_back(alpha_proposed[g] ? static_cast<double>(alpha_accepted[g]) / static_cast<double>(alpha_proposed[g])
                                    : std::numeric_limits<double>::quiet_NaN());
  return out;
}

namespace conditional {

double lambda(double a_lambda, double b_lambda, std::int64_t observed, std::int64_t missed, RandomStream& rng) {
  return draw(dist::Gamma{a_lambda + static_cast<double>(observed + missed), b_lambda + 1.0}, rng);
}

std::vector<double> assignment_probabilities(CapturePattern pattern, double log_mark,
                                             const Eigen::Ref<const Eigen::RowVectorXd>& pi_row,
                                             const Eigen::MatrixXd& p, const Eigen::VectorXd& mu,
                                             const Eigen::VectorXd& sigma2) {
  const auto K = p.rows();
  std::vector<double> w(static_cast<std::size_t>(K));
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < K; ++k) {
    double lw = std::log(pi_row(k));
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      lw += pattern.captured_by(static_cast<std::size_t>(j)) ? std::log(p(k, j)) : std::log1p(-p(k, j));
    lw += log_density(dist::Normal{mu(k), sigma2(k)}, log_mark);
    w[static_cast<std::size_t>(k)] = lw;
    top = std::max(top, lw);
  }
  if (!std::isfinite(top)) throw NumericalError("all assignment weights underflow");
  double total = 0.0;
  for (double& v : w) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

MissingDraw missing(double lambda, const Eigen::Ref<const Eigen::RowVectorXd>& pi_row, const Eigen::VectorXd& q,
                    const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma2, double clamp, RandomStream& rng) {
  const auto K = static_cast<std::size_t>(q.size());
  MissingDraw out;
  out.by_cluster.assign(K, 0);
  const double p0 = missed_probability(pi_row, q);
  if (!(p0 >= kMissedProbabilityFloor)) return out;
  out.n0 = static_cast<std::int64_t>(draw(dist::Poisson{lambda * p0}, rng));
  if (out.n0 == 0) return out;
  std::vector<double> probs(K);
  for (std::size_t k = 0; k < K; ++k) probs[k] = pi_row(static_cast<Eigen::Index>(k)) * q(static_cast<Eigen::Index>(k)) / p0;
  // Renormalize away rounding so the multinomial sees an exact simplex.
  double total = 0.0;
  for (double v : probs) total += v;
  for (double& v : probs) v /= total;
  const auto alloc = draw(dist::Multinomial{static_cast<std::uint64_t>(out.n0), probs}, rng);
  out.log_marks.reserve(static_cast<std::size_t>(out.n0));
  for (std::size_t k = 0; k < K; ++k) {
    out.by_cluster[k] = static_cast<std::int64_t>(alloc[k]);
    const double sd = std::sqrt(sigma2(static_cast<Eigen::Index>(k)));
    for (std::uint64_t l = 0; l < alloc[k]; ++l) {
      double x = mu(static_cast<Eigen::Index>(k)) + sd * rng.standard_normal();
      if (std::abs(x) > clamp) {
        x = std::copysign(clamp, x);
        ++out.clamped;
      }
      out.log_marks.push_back(x);
    }
  }
  return out;
}

Eigen::RowVectorXd weights(std::span<const double> counts, double alpha, RandomStream& rng) {
  const double per = alpha / static_cast<double>(counts.size());
  std::vector<double> shape(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) shape[k] = per + counts[k];
  const auto pi = draw(dist::Dirichlet{shape}, rng);
  return Eigen::Map<const Eigen::RowVectorXd>(pi.data(), static_cast<Eigen::Index>(pi.size()));
}

AlphaStep alpha(std::span<const double> counts, double current, const AlphaPrior& prior, double proposal_sd,
                RandomStream& rng) {
  if (prior.fixed) return {prior.fixed_value, false};
  const double log_proposed = std::log(current) + proposal_sd * rng.standard_normal();
  const double proposed = std::exp(log_proposed);
  if (!(proposed > 0.0) || !std::isfinite(proposed)) return {current, false};
  const dist::Gamma gamma_prior{prior.shape, prior.rate};
  const double log_r = dm_log_marginal(counts, proposed) - dm_log_marginal(counts, current) +
                       log_density(gamma_prior, proposed) - log_density(gamma_prior, current) + log_proposed -
                       std::log(current);
  if (log_r >= 0.0 || std::log(rng.uniform()) < log_r) return {proposed, true};
  return {current, false};
}

double capture_prob(double a_p, double b_p, std::int64_t captures, std::int64_t members, RandomStream& rng) {
  const double v = draw(dist::Beta{a_p + static_cast<double>(captures), b_p + static_cast<double>(members - captures)}, rng);
  return clamp_open_unit(v);
}

MarkParams mark_params(std::span<const double> log_marks, double mu_current, double m0, double s0_sq, double c0,
                       double C0, RandomStream& rng) {
  const double n = static_cast<double>(log_marks.size());
  double ss = 0.0, sum = 0.0;
  for (double x : log_marks) {
    ss += (x - mu_current) * (x - mu_current);
    sum += x;
  }
  MarkParams out;
  out.sigma2 = draw(dist::InverseGamma{c0 + 0.5 * n, C0 + 0.5 * ss}, rng);
  const double v_hat = 1.0 / (1.0 / s0_sq + n / out.sigma2);
  const double m_hat = v_hat * (m0 / s0_sq + sum / out.sigma2);
  out.mu = draw(dist::Normal{m_hat, v_hat}, rng);
  return out;
}

}  // namespace conditional

LatentClassSampler::LatentClassSampler(const Dataset& data, ModelConfig config, MCMCSettings settings)
    : data_(data),
      config_(std::move(config)),
      settings_(settings),
      rng_(settings.seed),
      K_(config_.K),
      G_(data.num_strata()),
      R_(data.num_lists()) {
  config_.validate();
  settings_.validate();

  const double m = static_cast<double>(data_.size());
  if (!config_.m0 || !config_.s0_sq) {
    if (data_.size() < 2)
      throw ConfigError("at least two observed incidents are needed to derive m0 and s0_sq from the data");
    double mean = 0.0;
    for (const auto& r : data_.records()) mean += r.log_mark;
    mean /= m;
    double var = 0.0;
    for (const auto& r : data_.records()) var += (r.log_mark - mean) * (r.log_mark - mean);
    var /= m - 1.0;
    m0_ = config_.m0.value_or(mean);
    s0_sq_ = config_.s0_sq.value_or(var);
    if (!(s0_sq_ > 0.0)) throw ConfigError("observed log-marks have zero variance; set s0_sq explicitly");
  } else {
    m0_ = *config_.m0;
    s0_sq_ = *config_.s0_sq;
  }

  std::map<std::uint32_t, std::size_t> pattern_index;
  std::map<std::tuple<std::size_t, std::size_t, std::uint64_t>, std::size_t> profile_index;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto& r = data_[i];
    auto [pit, inserted] = pattern_index.emplace(r.pattern.bits, patterns_.size());
    if (inserted) patterns_.push_back(r.pattern);
    const auto key = std::make_tuple(r.stratum, pit->second, std::bit_cast<std::uint64_t>(r.log_mark));
    auto [it, fresh] = profile_index.emplace(key, profiles_.size());
    if (fresh) profiles_.push_back({r.stratum, pit->second, r.log_mark, {}});
    profiles_[it->second].members.push_back(i);
  }

  log_tau_.assign(G_, settings_.initial_log_tau);
  diag_.alpha_accepted.assign(G_, 0);
  diag_.alpha_proposed.assign(G_, 0);
  diag_.alpha_accepted_burn_in.assign(G_, 0);
  diag_.alpha_proposed_burn_in.assign(G_, 0);
}

void LatentClassSampler::initialize() {
  if (data_.empty()) throw ConfigError("dataset has no observed incidents; nothing to condition on");
  const auto K = static_cast<Eigen::Index>(K_);
  const auto G = static_cast<Eigen::Index>(G_);
  const auto R = static_cast<Eigen::Index>(R_);
  ParameterState ps;
  ps.p.resize(K, R);
  ps.mu.resize(K);
  ps.sigma2.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index j = 0; j < R; ++j)
      ps.p(k, j) = clamp_open_unit(draw(dist::Beta{config_.a_p, config_.b_p}, rng_));
    ps.sigma2(k) = draw(dist::InverseGamma{config_.c0, config_.C0}, rng_);
    ps.mu(k) = draw(dist::Normal{m0_, s0_sq_}, rng_);
  }
  ps.alpha.resize(G);
  ps.lambda.resize(G);
  ps.pi.resize(G, K);
  const std::vector<double> zeros(K_, 0.0);
  for (Eigen::Index g = 0; g < G; ++g) {
    ps.alpha(g) = config_.alpha_prior.fixed
                      ? config_.alpha_prior.fixed_value
                      : draw(dist::Gamma{config_.alpha_prior.shape, config_.alpha_prior.rate}, rng_);
    ps.pi.row(g) = conditional::weights(zeros, ps.alpha(g), rng_);
    const auto m_g = static_cast<double>(data_.stratum_counts()[static_cast<std::size_t>(g)]);
    if (config_.b_lambda == 0.0)
      ps.lambda(g) = m_g > 0.0 ? m_g : config_.a_lambda;  // improper prior: start at the observed count
    else
      ps.lambda(g) = draw(dist::Gamma{config_.a_lambda, config_.b_lambda}, rng_);
  }

  AugmentedState aug;
  aug.z.resize(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const auto g = static_cast<Eigen::Index>(data_[i].stratum);
    // pi is column-major, so rows are strided
    std::vector<double> row(K_);
    for (std::size_t k = 0; k < K_; ++k) row[k] = ps.pi(g, static_cast<Eigen::Index>(k));
    aug.z[i] = draw(dist::Categorical{row}, rng_);
  }
  aug.n0.assign(G_, 0);
  aug.n0_by_cluster = CountMatrix::Zero(G, K);
  aug.x0.assign(G_, {});
  params_ = std::move(ps);
  aug_ = std::move(aug);
  iteration_ = 0;
}

void LatentClassSampler::set_state(ParameterState params, AugmentedState aug) {
  const auto K = static_cast<Eigen::Index>(K_);
  const auto G = static_cast<Eigen::Index>(G_);
  if (params.pi.rows() != G || params.pi.cols() != K || params.p.rows() != K ||
      params.p.cols() != static_cast<Eigen::Index>(R_) || params.mu.size() != K || params.sigma2.size() != K ||
      params.alpha.size() != G || params.lambda.size() != G)
    throw ConfigError("parameter state dimensions do not match the sampler");
  if (aug.z.size() != data_.size() || aug.n0.size() != G_ || aug.x0.size() != G_ ||
      aug.n0_by_cluster.rows() != G || aug.n0_by_cluster.cols() != K)
    throw ConfigError("augmented state dimensions do not match the sampler");
  params_ = std::move(params);
  aug_ = std::move(aug);
}

std::string LatentClassSampler::context() const { return "iteration " + std::to_string(iteration_); }

void LatentClassSampler::update_assignments_observed() {
  const auto K = static_cast<Eigen::Index>(K_);
  // Log-likelihood of each distinct observed pattern under each cluster.
  Eigen::MatrixXd pattern_ll(static_cast<Eigen::Index>(patterns_.size()), K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < patterns_.size(); ++t) {
      double ll = 0.0;
      for (std::size_t j = 0; j < R_; ++j) {
        const double pkj = params_.p(k, static_cast<Eigen::Index>(j));
        ll += patterns_[t].captured_by(j) ? std::log(pkj) : std::log1p(-pkj);
      }
      pattern_ll(static_cast<Eigen::Index>(t), k) = ll;
    }
  }
  Eigen::MatrixXd log_pi = params_.pi.array().log().matrix();
  Eigen::VectorXd norm_const(K), inv_two_var(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    norm_const(k) = -0.5 * std::log(2.0 * std::numbers::pi * params_.sigma2(k));
    inv_two_var(k) = 0.5 / params_.sigma2(k);
  }

  // Clusters ordered by an upper bound on their log weight for each
  // (stratum, pattern); the mark term is at most 0. Scanning stops once the
  // bound falls 50 nats below the running maximum, far under rounding error.
  const std::size_t T = patterns_.size();
  std::vector<std::vector<std::size_t>> order(G_ * T);
  std::vector<std::vector<double>> bound(G_ * T);
  std::vector<char> needed(G_ * T, 0);
  for (const auto& prof : profiles_) needed[prof.stratum * T + prof.pattern_index] = 1;
  for (std::size_t g = 0; g < G_; ++g) {
    for (std::size_t t = 0; t < T; ++t) {
      if (!needed[g * T + t]) continue;
      auto& b = bound[g * T + t];
      auto& o = order[g * T + t];
      b.resize(K_);
      o.resize(K_);
      for (Eigen::Index k = 0; k < K; ++k)
        b[static_cast<std::size_t>(k)] =
            log_pi(static_cast<Eigen::Index>(g), k) + pattern_ll(static_cast<Eigen::Index>(t), k) + norm_const(k);
      std::iota(o.begin(), o.end(), std::size_t{0});
      std::sort(o.begin(), o.end(), [&](std::size_t a, std::size_t c) { return b[a] > b[c] || (b[a] == b[c] && a < c); });
    }
  }

  std::vector<double> cdf;
  std::vector<std::size_t> index;
  cdf.reserve(K_);
  index.reserve(K_);
  for (const auto& prof : profiles_) {
    const std::size_t cell = prof.stratum * T + prof.pattern_index;
    const auto& b = bound[cell];
    cdf.clear();
    index.clear();
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k : order[cell]) {
      if (b[k] < top - 50.0) break;
      const double d = prof.log_mark - params_.mu(static_cast<Eigen::Index>(k));
      const double lw = b[k] - d * d * inv_two_var(static_cast<Eigen::Index>(k));
      if (lw > top) top = lw;
      cdf.push_back(lw);
      index.push_back(k);
    }
    if (!std::isfinite(top))
      throw NumericalError(context() + ", stratum " + std::to_string(prof.stratum) +
                           ": all cluster assignment weights underflow for an observed incident");
    double acc = 0.0;
    for (auto& v : cdf) {
      acc += std::exp(v - top);
      v = acc;
    }
    for (std::size_t i : prof.members) {
      const double u = rng_.uniform() * acc;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      if (it == cdf.end()) --it;
      aug_.z[i] = index[static_cast<std::size_t>(it - cdf.begin())];
    }
  }
}

void LatentClassSampler::update_lambda() {
  for (std::size_t g = 0; g < G_; ++g)
    params_.lambda(static_cast<Eigen::Index>(g)) =
        conditional::lambda(config_.a_lambda, config_.b_lambda, data_.stratum_counts()[g], aug_.n0[g], rng_);
}

void LatentClassSampler::sample_missing() {
  const Eigen::VectorXd q = nondetection_probabilities(params_.p);
  for (std::size_t g = 0; g < G_; ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    auto draw_g = conditional::missing(params_.lambda(gi), params_.pi.row(gi), q, params_.mu, params_.sigma2,
                                       config_.log_mark_clamp, rng_);
    aug_.n0[g] = draw_g.n0;
    for (std::size_t k = 0; k < K_; ++k) aug_.n0_by_cluster(gi, static_cast<Eigen::Index>(k)) = draw_g.by_cluster[k];
    aug_.x0[g] = std::move(draw_g.log_marks);
    diag_.clamp_events += draw_g.clamped;
  }
}

std::vector<std::vector<double>> LatentClassSampler::cluster_counts() const {
  std::vector<std::vector<double>> counts(G_, std::vector<double>(K_, 0.0));
  for (std::size_t i = 0; i < data_.size(); ++i) counts[data_[i].stratum][aug_.z[i]] += 1.0;
  for (std::size_t g = 0; g < G_; ++g)
    for (std::size_t k = 0; k < K_; ++k)
      counts[g][k] += static_cast<double>(aug_.n0_by_cluster(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)));
  return counts;
}

void LatentClassSampler::update_alpha() {
  if (config_.alpha_prior.fixed) {
    params_.alpha.setConstant(config_.alpha_prior.fixed_value);
    return;
  }
  const auto counts = cluster_counts();
  const bool adapting = iteration_ > 0 && iteration_ <= settings_.burn_in;
  for (std::size_t g = 0; g < G_; ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    const auto step = conditional::alpha(counts[g], params_.alpha(gi), config_.alpha_prior, std::exp(log_tau_[g]), rng_);
    params_.alpha(gi) = step.alpha;
    if (adapting) {
      ++diag_.alpha_proposed_burn_in[g];
      diag_.alpha_accepted_burn_in[g] += step.accepted;
      const double gain = settings_.adapt_scale * std::pow(static_cast<double>(iteration_), -settings_.adapt_decay);
      log_tau_[g] += gain * ((step.accepted ? 1.0 : 0.0) - settings_.target_acceptance);
    } else {
      ++diag_.alpha_proposed[g];
      diag_.alpha_accepted[g] += step.accepted;
    }
  }
}

void LatentClassSampler::update_weights() {
  const auto counts = cluster_counts();
  for (std::size_t g = 0; g < G_; ++g) {
    const auto gi = static_cast<Eigen::Index>(g);
    params_.pi.row(gi) = conditional::weights(counts[g], params_.alpha(gi), rng_);
  }
}

void LatentClassSampler::update_capture_probs() {
  const auto K = static_cast<Eigen::Index>(K_);
  const auto R = static_cast<Eigen::Index>(R_);
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> captures =
      Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(K, R);
  std::vector<std::int64_t> members(K_, 0);
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const std::size_t k = aug_.z[i];
    ++members[k];
    for (std::size_t j = 0; j < R_; ++j)
      if (data_[i].pattern.captured_by(j)) ++captures(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
  }
  // augmented incidents: all-zero pattern
  for (std::size_t g = 0; g < G_; ++g)
    for (std::size_t k = 0; k < K_; ++k)
      members[k] += aug_.n0_by_cluster(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k));
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < R; ++j)
      params_.p(k, j) =
          conditional::capture_prob(config_.a_p, config_.b_p, captures(k, j), members[static_cast<std::size_t>(k)], rng_);
}

void LatentClassSampler::update_mark_params() {
  std::vector<std::vector<double>> by_cluster(K_);
  for (std::size_t i = 0; i < data_.size(); ++i) by_cluster[aug_.z[i]].push_back(data_[i].log_mark);
  for (std::size_t g = 0; g < G_; ++g) {
    std::size_t pos = 0;
    for (std::size_t k = 0; k < K_; ++k) {
      const auto n = static_cast<std::size_t>(aug_.n0_by_cluster(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)));
      by_cluster[k].insert(by_cluster[k].end(), aug_.x0[g].begin() + static_cast<std::ptrdiff_t>(pos),
                           aug_.x0[g].begin() + static_cast<std::ptrdiff_t>(pos + n));
      pos += n;
    }
  }
  for (std::size_t k = 0; k < K_; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const auto mp = conditional::mark_params(by_cluster[k], params_.mu(ki), m0_, s0_sq_, config_.c0, config_.C0, rng_);
    params_.sigma2(ki) = mp.sigma2;
    params_.mu(ki) = mp.mu;
  }
}

void LatentClassSampler::sweep() {
  ++iteration_;
  update_assignments_observed();
  update_lambda();
  sample_missing();
  update_alpha();
  update_weights();
  update_capture_probs();
  update_mark_params();
  params_.check(iteration_);
}

PosteriorDraws run_chain(const Dataset& data, const ModelConfig& config, const MCMCSettings& settings) {
  LatentClassSampler sampler(data, config, settings);
  sampler.initialize();

  PosteriorDraws out;
  const std::size_t G = data.num_strata();
  out.stratum_labels = data.stratum_labels();
  out.observed_counts = data.stratum_counts();
  out.observed_mark_sums = data.stratum_mark_sums();
  const std::size_t keep = settings.retained();
  out.iterations.reserve(keep);
  out.n0.reserve(keep * G);
  out.missed_mark_sum.reserve(keep * G);
  out.missed_mean_mark.reserve(keep * G);
  out.sum_x0.reserve(keep * G);
  out.sum_x0_sq.reserve(keep * G);
  out.trace_missed_count.reserve(settings.iterations);
  out.trace_missed_marks.reserve(settings.iterations);

  for (std::size_t t = 1; t <= settings.iterations; ++t) {
    sampler.sweep();
    const auto f = functionals(data, sampler.augmented(), config.round_imputed_marks);
    std::int64_t n0_total = 0;
    double marks_total = 0.0;
    for (const auto& fg : f) {
      n0_total += fg.n0;
      marks_total += fg.missed_mark_sum;
    }
    out.trace_missed_count.push_back(n0_total);
    out.trace_missed_marks.push_back(marks_total);
    if (!settings.is_retained(t)) continue;
    out.iterations.push_back(t);
    for (std::size_t g = 0; g < G; ++g) {
      if (f[g].total_count < out.observed_counts[g] || f[g].total_mark < out.observed_mark_sums[g])
        throw NumericalError("iteration " + std::to_string(t) + ", stratum " + std::to_string(g) +
                             ": totals fell below the observed lower bound");
      out.n0.push_back(f[g].n0);
      out.missed_mark_sum.push_back(f[g].missed_mark_sum);
      out.missed_mean_mark.push_back(f[g].missed_mean_mark);
      out.sum_x0.push_back(f[g].sum_x0);
      out.sum_x0_sq.push_back(f[g].sum_x0_sq);
    }
    if (settings.keep_snapshots) out.snapshots.push_back(sampler.parameters());
  }
  const auto& diag = sampler.diagnostics();
  out.clamp_events = diag.clamp_events;
  out.alpha_accepted = diag.alpha_accepted;
  out.alpha_proposed = diag.alpha_proposed;
  out.final_log_tau = sampler.log_tau();
  return out;
}

}  // namespace msemark
