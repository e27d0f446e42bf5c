#pragma once

// Frequentist competitors: the Chao lower-bound estimator, fixed-order
// regression estimators, and AIC/BIC selection over hierarchical log-linear
// models. Every estimator combines a missed-count estimate n̂0 with a
// missed-mean-mark estimate d̂0 as D̂0 = n̂0 · d̂0.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msemark/dataset.hpp"
#include "msemark/errors.hpp"

namespace msemark {

/// A model fit that cannot be used (rank deficiency, non-convergence, ...).
class FitRejected : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct CaptureCounts {
  std::int64_t f1 = 0;  // incidents on exactly one list
  std::int64_t f2 = 0;  // incidents on exactly two lists
  std::vector<int> per_incident;
};

CaptureCounts capture_counts(const Dataset& data);

struct ChaoEstimate {
  std::optional<double> n0;  // empty when f2 = 0
  double d0 = 0.0;           // observed mean mark
  std::optional<double> D0;
};

/// n̂0 = f1² / (2 f2); d̂0 = observed mean mark.
ChaoEstimate chao_estimate(const Dataset& data);

/// A model term is the set of lists whose indicators are multiplied,
/// stored as a bitmask. The intercept is implicit.
using Term = std::uint32_t;

std::string term_label(Term term);
std::vector<Term> main_effect_terms(std::size_t num_lists);
std::vector<Term> pairwise_terms(std::size_t num_lists);

/// Main effects plus a hierarchy-respecting set of two- and three-way interactions.
struct HierarchicalModelSpec {
  std::size_t num_lists = 4;
  std::vector<Term> pairs;
  std::vector<Term> triples;

  std::vector<Term> terms() const;
  std::size_t num_coefficients() const noexcept { return 1 + num_lists + pairs.size() + triples.size(); }
  bool is_hierarchical() const;
  std::string label() const;
  friend bool operator==(const HierarchicalModelSpec&, const HierarchicalModelSpec&) = default;
};

/// All hierarchical models with every main effect, any pairwise set, and any
/// three-way set whose pairs are all present. 113 models for four lists.
std::vector<HierarchicalModelSpec> enumerate_hierarchical_models(std::size_t num_lists = 4);

struct MarkRegressionFit {
  std::vector<Term> terms;
  Eigen::VectorXd beta;  // intercept first, then `terms` in order
  double rss = 0.0;
  double sigma2_unbiased = 0.0;  // rss / (m - coefficients)
  double sigma2_ml = 0.0;        // rss / m
  std::size_t observations = 0;
  double log_likelihood = 0.0;  // Gaussian, evaluated at the ML variance

  std::size_t coefficients() const noexcept { return static_cast<std::size_t>(beta.size()); }
};

struct MarkEstimate {
  MarkRegressionFit fit;
  double d0 = 0.0;  // exp(β̂0 + σ̂²/2) with the unbiased σ̂²
};

/// OLS of ln y on the given terms. Throws FitRejected naming the first
/// term that makes the design rank deficient.
MarkEstimate fit_mark_regression(const Dataset& data, const std::vector<Term>& terms);

struct LogLinearFit {
  std::vector<Term> terms;
  Eigen::VectorXd gamma;       // intercept first
  std::vector<double> fitted;  // indexed by pattern bits; entry 0 unused
  double deviance = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;

  std::size_t coefficients() const noexcept { return static_cast<std::size_t>(gamma.size()); }
};

struct CountEstimate {
  LogLinearFit fit;
  double n0 = 0.0;  // exp(γ̂0), the prediction for the all-zero cell
};

/// Poisson GLM on the 2^R - 1 observed cells fit by IRLS from γ = 0 with
/// step-halving; converged when the relative deviance change drops below 1e-10.
CountEstimate fit_loglinear_counts(const PatternTable& table, const std::vector<Term>& terms);
CountEstimate fit_loglinear_counts(const Dataset& data, const std::vector<Term>& terms);

enum class InformationCriterion { aic, bic };

double information_criterion(const MarkRegressionFit& fit, InformationCriterion ic);
/// For the count family BIC uses the number of observed cells as sample size.
double information_criterion(const LogLinearFit& fit, std::size_t num_cells, InformationCriterion ic);

struct ICSelection {
  InformationCriterion criterion = InformationCriterion::bic;
  HierarchicalModelSpec mark_model;
  double d0 = 0.0;
  HierarchicalModelSpec count_model;
  double n0 = 0.0;
  double D0 = 0.0;
};

/// Selects the mark model and the count model separately, each minimizing
/// the criterion over the hierarchical family. Ties go to fewer
/// coefficients, then to the lexicographically smaller term list.
/// Throws FitRejected when a whole family fails to fit.
ICSelection select_by_ic(const Dataset& data, InformationCriterion ic);
/// Both criteria from one pass over the family.
std::pair<ICSelection, ICSelection> select_by_aic_bic(const Dataset& data);

}  // namespace msemark
