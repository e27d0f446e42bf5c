#include "msemark/experiments.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "msemark/baselines.hpp"
#include "msemark/csv.hpp"
#include "msemark/errors.hpp"

namespace msemark {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd rows_to_matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::uint64_t name_key(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

void DGPSpec::validate() const {
  const std::size_t K = pi.size();
  if (K == 0) throw ConfigError("DGP " + name + ": no classes");
  if (mu.size() != K || sigma.size() != K || static_cast<std::size_t>(p.rows()) != K)
    throw ConfigError("DGP " + name + ": class parameter lengths differ");
  if (p.cols() < 2) throw ConfigError("DGP " + name + ": at least two lists are needed");
  if (N == 0) throw ConfigError("DGP " + name + ": population size must be positive");
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    if (!(pi[k] >= 0.0)) throw ConfigError("DGP " + name + ": negative class weight");
    if (!(sigma[k] > 0.0)) throw ConfigError("DGP " + name + ": standard deviations must be positive");
    if (!std::isfinite(mu[k])) throw ConfigError("DGP " + name + ": non-finite mean");
    total += pi[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("DGP " + name + ": class weights must sum to 1");
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (!(p.data()[i] >= 0.0 && p.data()[i] <= 1.0))
      throw ConfigError("DGP " + name + ": capture probabilities must lie in [0, 1]");
}

double DGPSpec::missed_probability() const {
  double out = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) {
    double q = 1.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) q *= 1.0 - p(static_cast<Eigen::Index>(k), j);
    out += pi[k] * q;
  }
  return out;
}

DGPSpec DGPSpec::setting_a() {
  DGPSpec s;
  s.name = "A";
  s.pi = {1.0};
  s.mu = {2.5};
  s.sigma = {1.0};
  s.p = rows_to_matrix({{0.40, 0.10, 0.12, 0.20}});
  return s;
}

DGPSpec DGPSpec::setting_b() {
  DGPSpec s;
  s.name = "B";
  s.pi = {0.40, 0.30, 0.30};
  s.mu = {6.0, 4.0, 2.0};
  s.sigma = {0.8, 0.8, 0.8};
  s.p = rows_to_matrix({{0.60, 0.55, 0.60, 0.55}, {0.35, 0.30, 0.35, 0.30}, {0.15, 0.18, 0.15, 0.18}});
  return s;
}

DGPSpec DGPSpec::setting_c() {
  DGPSpec s;
  s.name = "C";
  s.pi = {0.70, 0.30};
  s.mu = {4.5, 2.5};
  s.sigma = {0.4, 1.2};
  s.p = rows_to_matrix({{0.50, 0.45, 0.50, 0.45}, {0.12, 0.15, 0.12, 0.15}});
  return s;
}

DGPSpec DGPSpec::by_name(const std::string& name) {
  if (name == "A") return setting_a();
  if (name == "B") return setting_b();
  if (name == "C") return setting_c();
  throw ConfigError("unknown simulation setting '" + name + "' (expected A, B or C)");
}

GeneratedReplicate generate_setting(const DGPSpec& spec, RandomStream& rng) {
  spec.validate();
  const std::size_t R = spec.num_lists();
  ReplicateTruth truth;
  truth.missed_by_class.assign(spec.num_classes(), 0);
  std::vector<IncidentRecord> records;
  records.reserve(spec.N);
  for (std::size_t i = 0; i < spec.N; ++i) {
    const auto k = draw(dist::Categorical{spec.pi}, rng);
    const double x = draw(dist::Normal{spec.mu[k], spec.sigma[k] * spec.sigma[k]}, rng);
    const double y = std::max(1.0, std::round(std::exp(x)));
    std::uint32_t bits = 0;
    for (std::size_t j = 0; j < R; ++j)
      if (rng.uniform() < spec.p(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) bits |= 1U << j;
    truth.population_mark_sum += y;
    if (bits == 0) {
      ++truth.n0_true;
      truth.D0_true += y;
      ++truth.missed_by_class[k];
      continue;
    }
    IncidentRecord r;
    r.id = "u" + std::to_string(i + 1);
    r.stratum = 0;
    r.pattern = CapturePattern{bits};
    r.mark = y;
    r.log_mark = std::log(y);
    records.push_back(std::move(r));
  }
  std::vector<std::string> lists;
  for (std::size_t j = 0; j < R; ++j) lists.push_back("L" + std::to_string(j + 1));
  return {Dataset(std::move(records), std::move(lists), {"all"}), std::move(truth)};
}

std::string to_string(Method m) {
  switch (m) {
    case Method::naive:
      return "naive";
    case Method::regression_main:
      return "regression-main";
    case Method::regression_pairwise:
      return "regression-pairwise";
    case Method::regression_aic:
      return "regression-AIC";
    case Method::regression_bic:
      return "regression-BIC";
    case Method::mixture:
      return "mixture";
  }
  return "unknown";
}

Method parse_method(const std::string& text) {
  for (Method m : all_methods())
    if (to_string(m) == text) return m;
  throw ConfigError("unknown method '" + text +
                    "' (expected naive, regression-main, regression-pairwise, regression-AIC, regression-BIC or mixture)");
}

std::vector<Method> all_methods() {
  return {Method::naive,          Method::regression_main, Method::regression_pairwise,
          Method::regression_aic, Method::regression_bic,  Method::mixture};
}

std::vector<Method> parse_methods(const std::string& text) {
  if (text == "all") return all_methods();
  std::vector<Method> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_method(item));
  if (out.empty()) throw ConfigError("no methods given");
  return out;
}

std::vector<MethodEstimate> estimate_methods(const Dataset& data, const std::vector<Method>& methods,
                                             const ModelConfig& model, const MCMCSettings& mcmc) {
  std::vector<MethodEstimate> out;
  std::optional<std::pair<ICSelection, ICSelection>> selection;
  std::string selection_error;
  bool selection_tried = false;

  auto regression = [&](const std::vector<Term>& terms) {
    MethodEstimate e;
    try {
      const auto mark = fit_mark_regression(data, terms);
      const auto count = fit_loglinear_counts(data, terms);
      e.defined = true;
      e.n0 = count.n0;
      e.D0 = count.n0 * mark.d0;
    } catch (const FitRejected& err) {
      e.note = err.what();
    }
    return e;
  };

  for (Method m : methods) {
    MethodEstimate e;
    switch (m) {
      case Method::naive: {
        const auto c = chao_estimate(data);
        if (c.n0) {
          e.defined = true;
          e.n0 = *c.n0;
          e.D0 = *c.D0;
        } else {
          e.note = "no incidents on exactly two lists";
        }
        break;
      }
      case Method::regression_main:
        e = regression(main_effect_terms(data.num_lists()));
        break;
      case Method::regression_pairwise:
        e = regression(pairwise_terms(data.num_lists()));
        break;
      case Method::regression_aic:
      case Method::regression_bic: {
        if (!selection_tried) {
          selection_tried = true;
          try {
            selection = select_by_aic_bic(data);
          } catch (const FitRejected& err) {
            selection_error = err.what();
          }
        }
        if (selection) {
          const auto& s = m == Method::regression_aic ? selection->first : selection->second;
          e.defined = true;
          e.n0 = s.n0;
          e.D0 = s.D0;
        } else {
          e.note = selection_error;
        }
        break;
      }
      case Method::mixture: {
        const auto draws = run_chain(data, model, mcmc);
        const auto n0 = central_interval(draws.pooled_missed_counts());
        const auto D0 = central_interval(draws.pooled_missed_marks());
        e.defined = true;
        e.n0 = n0.median;
        e.D0 = D0.median;
        e.n0_interval = n0;
        e.D0_interval = D0;
        break;
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mutex;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!first) first = std::current_exception();
        failed = true;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  if (first) std::rethrow_exception(first);
}

StudyResult run_replication_study(const StudyOptions& options) {
  options.model.validate();
  options.mcmc.validate();
  for (const auto& s : options.settings) s.validate();

  StudyResult result;
  for (const auto& s : options.settings) result.settings.push_back(s.name);
  result.methods = options.methods;
  const std::size_t M = options.methods.size();
  const std::size_t tasks = options.settings.size() * options.replicates;
  result.replicates.resize(tasks * M);
  std::vector<char> failed(tasks, 0);
  std::mutex progress_mutex;

  parallel_for(tasks, options.jobs, [&](std::size_t task) {
    const auto& spec = options.settings[task / options.replicates];
    const std::size_t rep = task % options.replicates;
    const std::uint64_t seed = derive_seed(options.mcmc.seed, {name_key(spec.name), rep});
    std::vector<ReplicateResult> rows(M);
    for (std::size_t i = 0; i < M; ++i) {
      rows[i].setting = spec.name;
      rows[i].replicate = rep;
      rows[i].seed = seed;
      rows[i].method = options.methods[i];
    }
    try {
      RandomStream rng(seed);
      auto gen = generate_setting(spec, rng);
      MCMCSettings mcmc = options.mcmc;
      mcmc.seed = derive_seed(seed, {1});
      mcmc.keep_snapshots = false;
      const auto estimates = estimate_methods(gen.observed, options.methods, options.model, mcmc);
      for (std::size_t i = 0; i < M; ++i) {
        rows[i].observed = gen.observed.size();
        rows[i].truth = gen.truth;
        rows[i].estimate = estimates[i];
      }
    } catch (const std::exception& err) {
      failed[task] = 1;
      for (auto& r : rows) r.error = err.what();
    }
    std::move(rows.begin(), rows.end(), result.replicates.begin() + static_cast<std::ptrdiff_t>(task * M));
    if (options.progress) {
      std::lock_guard lock(progress_mutex);
      options.progress(spec.name, rep);
    }
  });

  result.failed_replicates = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  result.summaries = aggregate(result.replicates, result.settings, result.methods);
  return result;
}

std::vector<MethodSummary> aggregate(const std::vector<ReplicateResult>& results,
                                     const std::vector<std::string>& settings, const std::vector<Method>& methods) {
  std::vector<MethodSummary> out;
  for (const auto& s : settings) {
    for (Method m : methods) {
      MethodSummary sum;
      sum.setting = s;
      sum.method = m;
      double re_n = 0.0, re_D = 0.0, se_n = 0.0, se_D = 0.0;
      std::size_t cov_n = 0, cov_D = 0, with_interval = 0;
      for (const auto& r : results) {
        if (r.setting != s || r.method != m) continue;
        const auto& e = r.estimate;
        if (!r.error.empty() || !e.defined || r.truth.n0_true <= 0 || !(r.truth.D0_true > 0.0) ||
            !std::isfinite(e.n0) || !std::isfinite(e.D0)) {
          ++sum.excluded;
          continue;
        }
        ++sum.used;
        const double tn = static_cast<double>(r.truth.n0_true);
        const double tD = r.truth.D0_true;
        re_n += (e.n0 - tn) / tn;
        re_D += (e.D0 - tD) / tD;
        se_n += (e.n0 - tn) * (e.n0 - tn);
        se_D += (e.D0 - tD) * (e.D0 - tD);
        if (e.n0_interval && e.D0_interval) {
          ++with_interval;
          if (tn >= e.n0_interval->lower && tn <= e.n0_interval->upper) ++cov_n;
          if (tD >= e.D0_interval->lower && tD <= e.D0_interval->upper) ++cov_D;
        }
      }
      const double u = static_cast<double>(sum.used);
      sum.rel_error_n0 = sum.used ? re_n / u : kNaN;
      sum.rel_error_D0 = sum.used ? re_D / u : kNaN;
      sum.log_rmse_n0 = sum.used ? std::log(std::sqrt(se_n / u)) : kNaN;
      sum.log_rmse_D0 = sum.used ? std::log(std::sqrt(se_D / u)) : kNaN;
      if (with_interval) {
        sum.coverage_n0 = static_cast<double>(cov_n) / static_cast<double>(with_interval);
        sum.coverage_D0 = static_cast<double>(cov_D) / static_cast<double>(with_interval);
      }
      out.push_back(sum);
    }
  }
  return out;
}

void write_replicates_csv(std::ostream& out, const StudyResult& result) {
  csv::write_row(out, {"setting", "method", "replicate", "seed", "observed", "n0_hat", "D0_hat", "n0_true", "D0_true",
                       "n0_lower", "n0_upper", "D0_lower", "D0_upper", "covered_n0", "covered_D0", "status"});
  for (const auto& r : result.replicates) {
    const auto& e = r.estimate;
    auto num = [&](double v) { return e.defined ? csv::format_exact(v) : std::string("NA"); };
    auto opt = [](const std::optional<Interval>& iv, bool upper) {
      return iv ? csv::format_exact(upper ? iv->upper : iv->lower) : std::string("NA");
    };
    auto covered = [](const std::optional<Interval>& iv, double truth) {
      if (!iv) return std::string("NA");
      return std::string(truth >= iv->lower && truth <= iv->upper ? "1" : "0");
    };
    std::string status = "ok";
    if (!r.error.empty())
      status = "failed: " + r.error;
    else if (!e.defined)
      status = "undefined: " + e.note;
    csv::write_row(out, {r.setting, to_string(r.method), std::to_string(r.replicate), std::to_string(r.seed),
                         std::to_string(r.observed), num(e.n0), num(e.D0), std::to_string(r.truth.n0_true),
                         csv::format_exact(r.truth.D0_true), opt(e.n0_interval, false), opt(e.n0_interval, true),
                         opt(e.D0_interval, false), opt(e.D0_interval, true),
                         covered(e.n0_interval, static_cast<double>(r.truth.n0_true)),
                         covered(e.D0_interval, r.truth.D0_true), status});
  }
}

std::vector<std::string> aggregate_csv_columns(const std::vector<std::string>& settings) {
  std::vector<std::string> cols = {"panel", "method"};
  for (const auto& s : settings) {
    cols.push_back(s + "_D0");
    cols.push_back(s + "_n0");
  }
  cols.push_back("overall_D0");
  cols.push_back("overall_n0");
  return cols;
}

void write_aggregate_csv(std::ostream& out, const StudyResult& result) {
  csv::write_row(out, aggregate_csv_columns(result.settings));
  auto find = [&](const std::string& s, Method m) -> const MethodSummary& {
    for (const auto& x : result.summaries)
      if (x.setting == s && x.method == m) return x;
    throw Error("missing summary for setting " + s);
  };
  struct Panel {
    const char* name;
    double MethodSummary::*D0;
    double MethodSummary::*n0;
  };
  const Panel panels[] = {{"relative_error", &MethodSummary::rel_error_D0, &MethodSummary::rel_error_n0},
                          {"log_rmse", &MethodSummary::log_rmse_D0, &MethodSummary::log_rmse_n0}};
  for (const auto& panel : panels) {
    for (Method m : result.methods) {
      std::vector<std::string> row = {panel.name, to_string(m)};
      double sD = 0.0, sn = 0.0;
      for (const auto& s : result.settings) {
        const auto& x = find(s, m);
        row.push_back(csv::format(x.*panel.D0));
        row.push_back(csv::format(x.*panel.n0));
        sD += x.*panel.D0;
        sn += x.*panel.n0;
      }
      const double n = static_cast<double>(result.settings.size());
      row.push_back(csv::format(result.settings.empty() ? kNaN : sD / n));
      row.push_back(csv::format(result.settings.empty() ? kNaN : sn / n));
      csv::write_row(out, row);
    }
  }
  for (Method m : result.methods) {
    std::vector<std::string> row = {"excluded", to_string(m)};
    std::size_t total = 0;
    for (const auto& s : result.settings) {
      const auto e = find(s, m).excluded;
      total += e;
      row.push_back(std::to_string(e));
      row.push_back(std::to_string(e));
    }
    row.push_back(std::to_string(total));
    row.push_back(std::to_string(total));
    csv::write_row(out, row);
  }
}

void write_coverage_csv(std::ostream& out, const StudyResult& result) {
  csv::write_row(out, {"setting", "method", "target", "coverage", "replicates"});
  for (const auto& x : result.summaries) {
    if (!x.coverage_n0) continue;
    csv::write_row(out, {x.setting, to_string(x.method), "n0", csv::format(*x.coverage_n0), std::to_string(x.used)});
    csv::write_row(out, {x.setting, to_string(x.method), "D0", csv::format(*x.coverage_D0), std::to_string(x.used)});
  }
}

StudyPreset StudyPreset::desk() {
  StudyPreset p;
  p.replicates = 20;
  p.mcmc.iterations = 20000;
  p.mcmc.burn_in = 4000;
  p.mcmc.thin = 4;
  return p;
}

StudyPreset StudyPreset::paper() {
  StudyPreset p;
  p.replicates = 200;
  p.mcmc.burn_in = 25000;
  p.mcmc.thin = 6;
  p.mcmc.iterations = 25000 + 250000 * 6;
  return p;
}

StudyPreset StudyPreset::by_name(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

std::string PriorGridEntry::label() const {
  std::ostringstream s;
  s << "K=" << K << " c0=" << csv::format_exact(c0) << " C0=" << csv::format_exact(C0)
    << " alpha=" << alpha.to_string();
  return s.str();
}

ModelConfig PriorGridEntry::apply(ModelConfig base) const {
  base.K = K;
  base.c0 = c0;
  base.C0 = C0;
  base.alpha_prior = alpha;
  return base;
}

std::vector<PriorGridEntry> prior_grid() {
  const std::size_t Ks[] = {80, 100, 120};
  const double c0s[] = {3.5, 4.0, 4.5};
  const double C0s[] = {1.0, 1.5, 2.0};
  const AlphaPrior alphas[] = {AlphaPrior::held_at(1.0), AlphaPrior::gamma(1.0, 1.0), AlphaPrior::gamma(0.25, 0.25),
                               AlphaPrior::gamma(2.0, 4.0)};
  std::vector<PriorGridEntry> out;
  for (auto K : Ks)
    for (double c0 : c0s)
      for (double C0 : C0s)
        for (const auto& a : alphas) {
          PriorGridEntry e;
          e.index = out.size();
          e.K = K;
          e.c0 = c0;
          e.C0 = C0;
          e.alpha = a;
          e.baseline = K == 100 && c0 == 4.0 && C0 == 1.0 && a == AlphaPrior::gamma(1.0, 1.0);
          out.push_back(e);
        }
  return out;
}

std::vector<PriorGridEntry> baseline_grid() {
  for (auto e : prior_grid())
    if (e.baseline) {
      e.index = 0;
      return {e};
    }
  throw Error("prior grid has no baseline entry");
}

std::vector<SensitivityRow> run_sensitivity(const Dataset& data, const std::vector<PriorGridEntry>& grid,
                                            const ModelConfig& base, const MCMCSettings& mcmc, std::size_t jobs) {
  std::vector<SensitivityRow> rows(grid.size());
  parallel_for(grid.size(), jobs, [&](std::size_t i) {
    auto& row = rows[i];
    row.entry = grid[i];
    try {
      MCMCSettings settings = mcmc;
      settings.keep_snapshots = false;
      const auto draws = run_chain(data, grid[i].apply(base), settings);
      row.missed_count = central_interval(draws.pooled_missed_counts());
      row.missed_marks = central_interval(draws.pooled_missed_marks());
      row.ok = true;
    } catch (const Error& err) {
      row.error = err.what();
    }
  });
  return rows;
}

void write_sensitivity_csv(std::ostream& out, const std::vector<SensitivityRow>& rows) {
  csv::write_row(out, {"index", "K", "c0", "C0", "alpha_prior", "baseline", "status", "n0_median", "n0_q025",
                       "n0_q975", "D0_median", "D0_q025", "D0_q975"});
  for (const auto& r : rows) {
    auto f = [&](double v) { return r.ok ? csv::format(v) : std::string("NA"); };
    csv::write_row(out, {std::to_string(r.entry.index), std::to_string(r.entry.K), csv::format_exact(r.entry.c0),
                         csv::format_exact(r.entry.C0), r.entry.alpha.to_string(), r.entry.baseline ? "1" : "0",
                         r.ok ? "ok" : "failed: " + r.error, f(r.missed_count.median), f(r.missed_count.lower),
                         f(r.missed_count.upper), f(r.missed_marks.median), f(r.missed_marks.lower),
                         f(r.missed_marks.upper)});
  }
}

}  // namespace msemark
