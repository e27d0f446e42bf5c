#pragma once

// Simulation study (data-generating settings, replication engine, bias /
// RMSE / coverage metrics) and the prior-sensitivity grid.

#include <Eigen/Core>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "msemark/analytics.hpp"
#include "msemark/dataset.hpp"
#include "msemark/latent_class.hpp"
#include "msemark/random.hpp"

namespace msemark {

/// A finite mixture population: class weights, log-normal marks and
/// per-class capture probabilities (classes x lists).
struct DGPSpec {
  std::string name;
  std::size_t N = 2500;
  std::vector<double> pi;
  std::vector<double> mu;
  std::vector<double> sigma;
  Eigen::MatrixXd p;

  void validate() const;
  std::size_t num_classes() const noexcept { return pi.size(); }
  std::size_t num_lists() const noexcept { return static_cast<std::size_t>(p.cols()); }
  /// Σ_k pi_k Π_j (1 - p_kj).
  double missed_probability() const;

  static DGPSpec setting_a();  // independence
  static DGPSpec setting_b();  // severity drives detectability
  static DGPSpec setting_c();  // low-capture fringe
  static DGPSpec by_name(const std::string& name);
};

struct ReplicateTruth {
  std::int64_t n0_true = 0;
  double D0_true = 0.0;
  double population_mark_sum = 0.0;
  std::vector<std::int64_t> missed_by_class;
};

struct GeneratedReplicate {
  Dataset observed;
  ReplicateTruth truth;
};

/// Marks are max{1, round(exp x)}; units missed by every list are withheld.
GeneratedReplicate generate_setting(const DGPSpec& spec, RandomStream& rng);

enum class Method { naive, regression_main, regression_pairwise, regression_aic, regression_bic, mixture };

std::string to_string(Method m);
Method parse_method(const std::string& text);
std::vector<Method> all_methods();
/// Comma-separated list; "all" expands to every method.
std::vector<Method> parse_methods(const std::string& text);

struct MethodEstimate {
  bool defined = false;
  double n0 = 0.0;
  double D0 = 0.0;
  // Central 95% posterior intervals, mixture only.
  std::optional<Interval> n0_interval;
  std::optional<Interval> D0_interval;
  std::string note;  // why the estimate is undefined
};

/// Estimates for every requested method on one dataset. Baseline fit
/// failures leave that method undefined; sampler failures propagate.
std::vector<MethodEstimate> estimate_methods(const Dataset& data, const std::vector<Method>& methods,
                                             const ModelConfig& model, const MCMCSettings& mcmc);

struct ReplicateResult {
  std::string setting;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::size_t observed = 0;
  ReplicateTruth truth;
  Method method = Method::naive;
  MethodEstimate estimate;
  std::string error;  // set when the whole replicate failed
};

struct MethodSummary {
  std::string setting;
  Method method = Method::naive;
  std::size_t used = 0;
  std::size_t excluded = 0;
  double rel_error_n0 = 0.0;
  double rel_error_D0 = 0.0;
  double log_rmse_n0 = 0.0;
  double log_rmse_D0 = 0.0;
  std::optional<double> coverage_n0;
  std::optional<double> coverage_D0;
};

struct StudyResult {
  std::vector<std::string> settings;
  std::vector<Method> methods;
  std::vector<ReplicateResult> replicates;
  std::vector<MethodSummary> summaries;
  std::size_t failed_replicates = 0;
};

struct StudyPreset {
  std::size_t replicates = 20;
  MCMCSettings mcmc;

  static StudyPreset desk();
  static StudyPreset paper();
  static StudyPreset by_name(const std::string& name);
};

struct StudyOptions {
  std::vector<DGPSpec> settings;
  std::vector<Method> methods = all_methods();
  std::size_t replicates = 20;
  ModelConfig model;
  MCMCSettings mcmc;  // mcmc.seed is the root seed
  std::size_t jobs = 1;
  /// Called once per finished replicate, from worker threads, serialized.
  std::function<void(const std::string& setting, std::size_t replicate)> progress;
};

/// Replicate r of setting S uses derive_seed(root, {S, r}) for data and
/// derive_seed(that, {1}) for the chain, so results do not depend on `jobs`.
StudyResult run_replication_study(const StudyOptions& options);

/// Pure reduction over per-replicate results. Estimates with a zero truth
/// or an undefined value are excluded and counted.
std::vector<MethodSummary> aggregate(const std::vector<ReplicateResult>& results,
                                     const std::vector<std::string>& settings, const std::vector<Method>& methods);

void write_replicates_csv(std::ostream& out, const StudyResult& result);
/// One row per (panel, method); columns <setting>_D0, <setting>_n0 for each
/// setting then overall_D0, overall_n0 (averages across settings).
void write_aggregate_csv(std::ostream& out, const StudyResult& result);
std::vector<std::string> aggregate_csv_columns(const std::vector<std::string>& settings);
void write_coverage_csv(std::ostream& out, const StudyResult& result);

struct PriorGridEntry {
  std::size_t index = 0;
  std::size_t K = 100;
  double c0 = 4.0;
  double C0 = 1.0;
  AlphaPrior alpha;
  bool baseline = false;

  std::string label() const;
  ModelConfig apply(ModelConfig base) const;
};

/// 3 x 3 x 3 x 4 = 108 entries, K slowest, then c0, C0 and the alpha prior.
std::vector<PriorGridEntry> prior_grid();
/// Only the baseline entry (K=100, c0=4, C0=1, alpha ~ Gamma(1,1)).
std::vector<PriorGridEntry> baseline_grid();

struct SensitivityRow {
  PriorGridEntry entry;
  bool ok = false;
  std::string error;
  Interval missed_count;
  Interval missed_marks;
};

/// Every entry runs with the same seed. Chain failures are recorded per row.
std::vector<SensitivityRow> run_sensitivity(const Dataset& data, const std::vector<PriorGridEntry>& grid,
                                            const ModelConfig& base, const MCMCSettings& mcmc, std::size_t jobs = 1);
void write_sensitivity_csv(std::ostream& out, const std::vector<SensitivityRow>& rows);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
/// is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace msemark
