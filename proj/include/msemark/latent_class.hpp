#pragma once

// Stratified mark-augmented latent-class model and its data-augmentation
// Gibbs sampler.
//
// Each incident belongs to one of K latent clusters shared across strata.
// Within cluster k, list j reports the incident with probability p_kj
// (independently across lists) and the log-mark is N(mu_k, sigma2_k).
// Stratum g has its own mixture weights pi_g ~ Dirichlet(alpha_g / K) and a
// Poisson(lambda_g) total incident count. Incidents missed by every list are
// imputed each sweep by Poisson thinning.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msemark/dataset.hpp"
#include "msemark/random.hpp"

namespace msemark {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Prior on the Dirichlet concentration alpha_g: Gamma(shape, rate), or held fixed.
struct AlphaPrior {
  bool fixed = false;
  double fixed_value = 1.0;
  double shape = 1.0;
  double rate = 1.0;

  static AlphaPrior held_at(double value) { return {true, value, 1.0, 1.0}; }
  static AlphaPrior gamma(double shape, double rate) { return {false, 1.0, shape, rate}; }
  /// "fixed:1" or "gamma:1,1".
  static AlphaPrior parse(const std::string& text);
  std::string to_string() const;
  friend bool operator==(const AlphaPrior&, const AlphaPrior&) = default;
};

struct ModelConfig {
  std::size_t K = 100;
  double a_p = 1.0;  // Beta prior on capture probabilities
  double b_p = 1.0;
  double c0 = 4.0;  // Inverse-Gamma prior on sigma2_k
  double C0 = 1.0;
  std::optional<double> m0;     // unset: sample mean of observed log-marks
  std::optional<double> s0_sq;  // unset: sample variance of observed log-marks
  AlphaPrior alpha_prior = AlphaPrior::gamma(1.0, 1.0);
  double a_lambda = 0.5;  // Gamma prior on lambda_g; b_lambda = 0 is the improper Jeffreys-type limit
  double b_lambda = 0.0;
  /// Report imputed marks as max{1, round(exp x)} instead of exp x.
  bool round_imputed_marks = false;
  /// Imputed log-marks are clamped to [-clamp, clamp].
  double log_mark_clamp = 30.0;

  void validate() const;
};

struct MCMCSettings {
  std::size_t iterations = 20000;
  std::size_t burn_in = 4000;
  std::size_t thin = 4;
  std::uint64_t seed = 20140217;
  double target_acceptance = 0.234;
  double adapt_scale = 1.0;   // c in ln tau += c t^{-decay} (acc - target)
  double adapt_decay = 0.6;
  double initial_log_tau = 0.0;
  /// Keep full parameter snapshots of every retained draw.
  bool keep_snapshots = false;

  void validate() const;
  std::size_t retained() const noexcept;
  bool is_retained(std::size_t iteration) const noexcept;  // 1-based
};

struct ParameterState {
  Eigen::MatrixXd pi;      // G x K, rows on the simplex
  Eigen::VectorXd alpha;   // G
  Eigen::MatrixXd p;       // K x R capture probabilities
  Eigen::VectorXd mu;      // K
  Eigen::VectorXd sigma2;  // K
  Eigen::VectorXd lambda;  // G

  std::size_t num_strata() const noexcept { return static_cast<std::size_t>(pi.rows()); }
  std::size_t num_clusters() const noexcept { return static_cast<std::size_t>(p.rows()); }
  /// Throws NumericalError naming the first violated invariant.
  void check(std::size_t iteration) const;
};

struct AugmentedState {
  std::vector<std::size_t> z;                // cluster of each observed incident (0-based)
  std::vector<std::int64_t> n0;              // G
  CountMatrix n0_by_cluster;                 // G x K
  std::vector<std::vector<double>> x0;       // per stratum, grouped by cluster in ascending order
};

/// Quantities implied by the current state.
struct DerivedQuantities {
  Eigen::VectorXd q;    // K, Π_j (1 - p_kj)
  Eigen::VectorXd p0;   // G, Σ_k pi_gk q_k
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1> N_k;
  CountMatrix N_gk;
};

Eigen::VectorXd nondetection_probabilities(const Eigen::MatrixXd& p);
/// p_0g for one stratum. Shared by the sampler and the reporting analytics.
double missed_probability(const Eigen::Ref<const Eigen::RowVectorXd>& pi_row, const Eigen::VectorXd& q);
DerivedQuantities derive(const Dataset& data, const ParameterState& params, const AugmentedState& aug);

/// Per-stratum functionals of one state: N_g, missed mark total, d_0g.
struct StratumFunctionals {
  std::int64_t n0 = 0;
  std::int64_t total_count = 0;     // N_g
  double missed_mark_sum = 0.0;     // Σ_ℓ exp(x_0gℓ)
  double total_mark = 0.0;          // Y_g^tot
  double missed_mean_mark = 0.0;    // d_0g, NaN when n0 = 0
  double sum_x0 = 0.0;
  double sum_x0_sq = 0.0;
};
std::vector<StratumFunctionals> functionals(const Dataset& data, const AugmentedState& aug,
                                            bool round_imputed_marks);

/// Retained output of a chain. Per-draw arrays are row-major [draw][stratum].
struct PosteriorDraws {
  std::vector<std::string> stratum_labels;
  std::vector<std::int64_t> observed_counts;   // m_g
  std::vector<double> observed_mark_sums;      // Σ_obs y
  std::vector<std::size_t> iterations;         // 1-based sweep index of each retained draw

  std::vector<std::int64_t> n0;
  std::vector<double> missed_mark_sum;
  std::vector<double> missed_mean_mark;  // NaN when n0 = 0
  std::vector<double> sum_x0;
  std::vector<double> sum_x0_sq;

  std::vector<ParameterState> snapshots;  // empty unless requested

  // One entry per sweep, burn-in included.
  std::vector<std::int64_t> trace_missed_count;
  std::vector<double> trace_missed_marks;

  // Diagnostics.
  std::uint64_t clamp_events = 0;
  std::vector<std::uint64_t> alpha_accepted;   // per stratum, after burn-in
  std::vector<std::uint64_t> alpha_proposed;   // per stratum, after burn-in
  std::vector<double> final_log_tau;

  std::size_t num_draws() const noexcept { return iterations.size(); }
  std::size_t num_strata() const noexcept { return stratum_labels.size(); }
  std::size_t at(std::size_t draw, std::size_t g) const noexcept { return draw * num_strata() + g; }
  std::int64_t total_count(std::size_t draw, std::size_t g) const {
    return observed_counts[g] + n0[at(draw, g)];
  }
  double total_mark(std::size_t draw, std::size_t g) const {
    return observed_mark_sums[g] + missed_mark_sum[at(draw, g)];
  }
  /// Draws pooled over strata.
  std::vector<double> pooled_missed_counts() const;
  std::vector<double> pooled_missed_marks() const;
  std::vector<double> alpha_acceptance_rates() const;
};

// Full-conditional draws. Each is a pure function of its inputs and the
// stream, so it can be checked in isolation against brute-force densities.
namespace conditional {

/// lambda_g ~ Gamma(a_lambda + m_g + n_0g, b_lambda + 1).
double lambda(double a_lambda, double b_lambda, std::int64_t observed, std::int64_t missed, RandomStream& rng);

/// Normalized P(z = k | s, x, ...) for one incident.
std::vector<double> assignment_probabilities(CapturePattern pattern, double log_mark,
                                             const Eigen::Ref<const Eigen::RowVectorXd>& pi_row,
                                             const Eigen::MatrixXd& p, const Eigen::VectorXd& mu,
                                             const Eigen::VectorXd& sigma2);

struct MissingDraw {
  std::int64_t n0 = 0;
  std::vector<std::int64_t> by_cluster;
  std::vector<double> log_marks;  // grouped by cluster
  std::uint64_t clamped = 0;
};
/// n_0g ~ Poisson(lambda p_0g); allocation ~ Multinomial(n_0g, pi_gk q_k / p_0g);
/// log-marks ~ N(mu_k, sigma2_k), clamped to [-clamp, clamp].
MissingDraw missing(double lambda, const Eigen::Ref<const Eigen::RowVectorXd>& pi_row, const Eigen::VectorXd& q,
                    const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma2, double clamp, RandomStream& rng);

/// pi_g ~ Dirichlet(alpha/K + N_gk).
Eigen::RowVectorXd weights(std::span<const double> counts, double alpha, RandomStream& rng);

struct AlphaStep {
  double alpha = 1.0;
  bool accepted = false;
};
/// One log-scale random-walk Metropolis-Hastings step for alpha_g with the
/// weights integrated out. `proposal_sd` is tau.
AlphaStep alpha(std::span<const double> counts, double current, const AlphaPrior& prior, double proposal_sd,
                RandomStream& rng);

/// p_kj ~ Beta(a_p + captures, b_p + members - captures), kept inside (0, 1).
double capture_prob(double a_p, double b_p, std::int64_t captures, std::int64_t members, RandomStream& rng);

struct MarkParams {
  double mu = 0.0;
  double sigma2 = 1.0;
};
/// sigma2 ~ Inv-Gamma(c0 + n/2, C0 + ½ Σ (x - mu_current)²), then
/// mu ~ N(m̂, V̂) given the new sigma2.
MarkParams mark_params(std::span<const double> log_marks, double mu_current, double m0, double s0_sq, double c0,
                       double C0, RandomStream& rng);

}  // namespace conditional

struct SamplerDiagnostics {
  std::uint64_t clamp_events = 0;
  std::vector<std::uint64_t> alpha_accepted;
  std::vector<std::uint64_t> alpha_proposed;
  std::vector<std::uint64_t> alpha_accepted_burn_in;
  std::vector<std::uint64_t> alpha_proposed_burn_in;
};

/// Gibbs sampler over (z, lambda, n0, x0, alpha, pi, p, sigma2, mu).
///
/// One sweep runs, in order: observed assignments, lambda_g, missed
/// incidents, alpha_g, pi_g, capture probabilities, then (sigma2, mu).
class LatentClassSampler {
 public:
  LatentClassSampler(const Dataset& data, ModelConfig config, MCMCSettings settings);

  /// Draws parameters from their priors and labels from the prior weights.
  /// Refuses a dataset with no observed incidents.
  void initialize();
  void set_state(ParameterState params, AugmentedState aug);

  void sweep();

  void update_assignments_observed();
  void update_lambda();
  void sample_missing();
  void update_alpha();
  void update_weights();
  void update_capture_probs();
  void update_mark_params();

  const ParameterState& parameters() const noexcept { return params_; }
  const AugmentedState& augmented() const noexcept { return aug_; }
  const ModelConfig& config() const noexcept { return config_; }
  const SamplerDiagnostics& diagnostics() const noexcept { return diag_; }
  const std::vector<double>& log_tau() const noexcept { return log_tau_; }
  std::size_t iteration() const noexcept { return iteration_; }
  double m0() const noexcept { return m0_; }
  double s0_sq() const noexcept { return s0_sq_; }
  RandomStream& rng() noexcept { return rng_; }

 private:
  struct Profile {
    std::size_t stratum;
    std::size_t pattern_index;
    double log_mark;
    std::vector<std::size_t> members;
  };

  std::vector<std::vector<double>> cluster_counts() const;  // G x K, observed + augmented
  std::string context() const;

  const Dataset& data_;
  ModelConfig config_;
  MCMCSettings settings_;
  RandomStream rng_;
  double m0_ = 0.0;
  double s0_sq_ = 1.0;
  std::size_t K_;
  std::size_t G_;
  std::size_t R_;

  std::vector<CapturePattern> patterns_;  // distinct observed patterns
  std::vector<Profile> profiles_;         // observed incidents sharing (stratum, pattern, log-mark)

  ParameterState params_;
  AugmentedState aug_;
  std::vector<double> log_tau_;
  SamplerDiagnostics diag_;
  std::size_t iteration_ = 0;
};

/// Runs a full chain and collects the retained draws.
PosteriorDraws run_chain(const Dataset& data, const ModelConfig& config, const MCMCSettings& settings);

}  // namespace msemark
