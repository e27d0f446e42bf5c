#pragma once

// Posterior functionals computed from retained draws: totals, missed mean
// marks, reporting probabilities, the completed-data correlation matrix and
// the mortality-rate Monte Carlo.
//
// Empirical quantiles use linear interpolation between order statistics
// (h = (n - 1) p), the same convention everywhere in the library.

#include <Eigen/Core>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msemark/dataset.hpp"
#include "msemark/latent_class.hpp"
#include "msemark/random.hpp"

namespace msemark {

double quantile_sorted(std::span<const double> sorted, double prob);
double quantile(std::vector<double> values, double prob);

struct Interval {
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};
/// Median and central interval at `level`.
Interval central_interval(std::vector<double> values, double level = 0.95);

struct SummaryRow {
  std::string stratum;  // "all" for pooled rows
  std::string functional;
  double median = 0.0;
  double lower = 0.0;  // 2.5%
  double upper = 0.0;  // 97.5%
  std::optional<double> observed_bound;
};

/// Rows for N, Y_tot, n0 and D0 per stratum, then pooled. Pooled values are
/// summed draw by draw before taking quantiles.
std::vector<SummaryRow> summarize_totals(const PosteriorDraws& draws);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

struct MissedMeanMark {
  std::string stratum;
  bool available = false;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double mean = 0.0;
  double excluded_fraction = 0.0;  // share of draws with n0 = 0
  double observed_mean = 0.0;
};

std::vector<MissedMeanMark> expected_missing_mark(const PosteriorDraws& draws);
void write_missed_mean_mark_csv(std::ostream& out, const std::vector<MissedMeanMark>& rows);

/// 1 - Σ_k pi_gk q_k.
double reporting_probability(const ParameterState& params, std::size_t g);
/// 1 - Σ_k w_gk(y) q_k with w_gk(y) ∝ pi_gk φ(ln y | mu_k, sigma2_k).
double reporting_probability_given_mark(const ParameterState& params, std::size_t g, double y);

enum class StratumWeighting { lambda, equal, observed };
StratumWeighting parse_stratum_weighting(const std::string& text);

struct CurvePoint {
  std::string stratum;  // "all" for the cross-stratum curve
  double y = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Per stratum and across strata; the cross-stratum value of each draw is a
/// weighted average of the stratum curves.
std::vector<CurvePoint> reporting_prob_given_mark(const PosteriorDraws& draws, std::span<const double> ys,
                                                  StratumWeighting weighting = StratumWeighting::lambda);
std::vector<SummaryRow> reporting_prob_by_stratum(const PosteriorDraws& draws);
void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& points);
/// n log-spaced marks from lo to hi.
std::vector<double> log_grid(double lo, double hi, std::size_t n);

struct CorrelationSummary {
  std::vector<std::string> names;  // list names then "x"
  Eigen::MatrixXd mean;            // NaN where never defined
  Eigen::MatrixXi used;            // (draw, stratum) cells contributing
  Eigen::MatrixXi excluded;        // cells where the entry was undefined
};

/// Pearson correlation of (s_1..s_R, x) over observed plus imputed
/// incidents, per draw and stratum, averaged over both.
CorrelationSummary augmented_correlation(const PosteriorDraws& draws, const Dataset& data);
void write_correlation_csv(std::ostream& out, const CorrelationSummary& corr);

struct RhoSpec {
  enum class Mode { uniform, beta, grid };
  Mode mode = Mode::beta;
  double a = 1.3;
  double b = 2.8;
  std::vector<double> grid;

  /// "uniform", "beta:1.3,2.8" or "grid:0,0.1,0.2".
  static RhoSpec parse(const std::string& text);
  std::string to_string() const;
  void validate() const;
};

std::vector<double> sample_rho(const RhoSpec& spec, std::size_t n, RandomStream& rng);

/// MR = (1 - rho) F / (A + F).
double mortality_rate(double rho, double fatalities, double arrivals);

struct MortalityInputs {
  std::vector<std::string> strata;
  std::vector<std::vector<double>> fatalities;  // [stratum][draw]
  std::vector<double> arrivals;

  static MortalityInputs from_draws(const PosteriorDraws& draws, std::span<const double> arrivals);
};

struct MortalityRow {
  std::string stratum;
  std::optional<double> rho;  // set in grid mode
  bool defined = true;
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct MortalityResult {
  std::vector<MortalityRow> rows;
  /// MR values per stratum; grid mode keys are "<stratum> rho=<value>".
  std::map<std::string, std::vector<double>> samples;
};

/// Strata rows then a pooled row. F is resampled with replacement when
/// `samples` exceeds the number of draws.
MortalityResult mortality_rate_mc(const MortalityInputs& inputs, const RhoSpec& rho, std::size_t samples,
                                  RandomStream& rng);
void write_mortality_csv(std::ostream& out, const MortalityResult& result);

/// Two columns: stratum label, arrivals.
std::map<std::string, double> read_arrivals_csv(std::istream& in);
/// Throws ConfigError unless the labels match the strata exactly.
std::vector<double> align_arrivals(const std::map<std::string, double>& arrivals,
                                   const std::vector<std::string>& strata);

struct Histogram {
  double lo = 0.0;
  double width = 0.0;
  std::vector<double> density;
};
Histogram histogram(std::span<const double> values, std::size_t bins);

}  // namespace msemark
