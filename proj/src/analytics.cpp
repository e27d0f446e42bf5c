#include "msemark/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "msemark/csv.hpp"
#include "msemark/errors.hpp"

namespace msemark {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

SummaryRow summary_row(std::string stratum, std::string functional, std::vector<double> values,
                       std::optional<double> bound) {
  const auto iv = central_interval(std::move(values));
  return {std::move(stratum), std::move(functional), iv.median, iv.lower, iv.upper, bound};
}

std::vector<double> split_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = csv::parse_double(item);
    if (!v || !std::isfinite(*v)) throw ConfigError(what + ": '" + item + "' is not a number");
    out.push_back(*v);
  }
  if (out.empty()) throw ConfigError(what + ": no values");
  return out;
}

}  // namespace

double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw DomainError("quantile probability outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double quantile(std::vector<double> values, double prob) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, prob);
}

Interval central_interval(std::vector<double> values, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("interval level must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile_sorted(values, 0.5), quantile_sorted(values, tail), quantile_sorted(values, 1.0 - tail)};
}

std::vector<SummaryRow> summarize_totals(const PosteriorDraws& draws) {
  const std::size_t D = draws.num_draws();
  const std::size_t G = draws.num_strata();
  if (D < 2) throw DomainError("summaries need at least two retained draws");
  std::vector<SummaryRow> rows;
  std::vector<double> pooled_N(D, 0.0), pooled_Y(D, 0.0), pooled_n0(D, 0.0), pooled_D0(D, 0.0);
  double m = 0.0, ysum = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    std::vector<double> N(D), Y(D), n0(D), D0(D);
    for (std::size_t d = 0; d < D; ++d) {
      N[d] = static_cast<double>(draws.total_count(d, g));
      Y[d] = draws.total_mark(d, g);
      n0[d] = static_cast<double>(draws.n0[draws.at(d, g)]);
      D0[d] = draws.missed_mark_sum[draws.at(d, g)];
      pooled_N[d] += N[d];
      pooled_Y[d] += Y[d];
      pooled_n0[d] += n0[d];
      pooled_D0[d] += D0[d];
    }
    const auto& label = draws.stratum_labels[g];
    const double mg = static_cast<double>(draws.observed_counts[g]);
    rows.push_back(summary_row(label, "N", std::move(N), mg));
    rows.push_back(summary_row(label, "Y_tot", std::move(Y), draws.observed_mark_sums[g]));
    rows.push_back(summary_row(label, "n0", std::move(n0), std::nullopt));
    rows.push_back(summary_row(label, "D0", std::move(D0), std::nullopt));
    m += mg;
    ysum += draws.observed_mark_sums[g];
  }
  if (G > 1) {
    rows.push_back(summary_row("all", "N", std::move(pooled_N), m));
    rows.push_back(summary_row("all", "Y_tot", std::move(pooled_Y), ysum));
    rows.push_back(summary_row("all", "n0", std::move(pooled_n0), std::nullopt));
    rows.push_back(summary_row("all", "D0", std::move(pooled_D0), std::nullopt));
  }
  return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  csv::write_row(out, {"stratum", "functional", "median", "q025", "q975", "observed"});
  for (const auto& r : rows)
    csv::write_row(out, {r.stratum, r.functional, csv::format(r.median), csv::format(r.lower), csv::format(r.upper),
                         r.observed_bound ? csv::format(*r.observed_bound) : std::string("NA")});
}

std::vector<MissedMeanMark> expected_missing_mark(const PosteriorDraws& draws) {
  std::vector<MissedMeanMark> out;
  const std::size_t D = draws.num_draws();
  for (std::size_t g = 0; g < draws.num_strata(); ++g) {
    MissedMeanMark row;
    row.stratum = draws.stratum_labels[g];
    row.observed_mean = draws.observed_counts[g] > 0
                            ? draws.observed_mark_sums[g] / static_cast<double>(draws.observed_counts[g])
                            : kNaN;
    std::vector<double> values;
    for (std::size_t d = 0; d < D; ++d)
      if (draws.n0[draws.at(d, g)] > 0) values.push_back(draws.missed_mean_mark[draws.at(d, g)]);
    row.excluded_fraction = D > 0 ? 1.0 - static_cast<double>(values.size()) / static_cast<double>(D) : 1.0;
    if (values.empty()) {
      row.available = false;
      row.median = row.lower = row.upper = row.mean = kNaN;
    } else {
      row.available = true;
      row.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
      const auto iv = central_interval(std::move(values));
      row.median = iv.median;
      row.lower = iv.lower;
      row.upper = iv.upper;
    }
    out.push_back(row);
  }
  return out;
}

void write_missed_mean_mark_csv(std::ostream& out, const std::vector<MissedMeanMark>& rows) {
  csv::write_row(out, {"stratum", "status", "mean", "median", "q025", "q975", "excluded_fraction", "observed_mean"});
  for (const auto& r : rows)
    csv::write_row(out, {r.stratum, r.available ? "ok" : "unavailable", csv::format(r.mean), csv::format(r.median),
                         csv::format(r.lower), csv::format(r.upper), csv::format(r.excluded_fraction),
                         csv::format(r.observed_mean)});
}

double reporting_probability(const ParameterState& params, std::size_t g) {
  const Eigen::VectorXd q = nondetection_probabilities(params.p);
  return 1.0 - missed_probability(params.pi.row(static_cast<Eigen::Index>(g)), q);
}

double reporting_probability_given_mark(const ParameterState& params, std::size_t g, double y) {
  if (!(y > 0.0) || !std::isfinite(y)) throw DomainError("reporting probability needs a positive mark");
  const double x = std::log(y);
  const Eigen::Index K = params.p.rows();
  const Eigen::VectorXd q = nondetection_probabilities(params.p);
  std::vector<double> logw(static_cast<std::size_t>(K));
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < K; ++k) {
    const double pi = params.pi(static_cast<Eigen::Index>(g), k);
    double lw = -std::numeric_limits<double>::infinity();
    if (pi > 0.0) {
      const double s2 = params.sigma2(k);
      const double z = x - params.mu(k);
      lw = std::log(pi) - 0.5 * std::log(s2) - z * z / (2.0 * s2);
    }
    logw[static_cast<std::size_t>(k)] = lw;
    top = std::max(top, lw);
  }
  double total = 0.0, missed = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double w = std::exp(logw[static_cast<std::size_t>(k)] - top);
    total += w;
    missed += w * q(k);
  }
  return 1.0 - missed / total;
}

StratumWeighting parse_stratum_weighting(const std::string& text) {
  if (text == "lambda") return StratumWeighting::lambda;
  if (text == "equal") return StratumWeighting::equal;
  if (text == "observed") return StratumWeighting::observed;
  throw ConfigError("unknown stratum weighting '" + text + "' (expected lambda, equal or observed)");
}

std::vector<CurvePoint> reporting_prob_given_mark(const PosteriorDraws& draws, std::span<const double> ys,
                                                  StratumWeighting weighting) {
  if (draws.snapshots.empty()) throw DomainError("reporting curves need parameter snapshots");
  const std::size_t D = draws.snapshots.size();
  const std::size_t G = draws.num_strata();
  std::vector<CurvePoint> out;
  for (double y : ys) {
    std::vector<std::vector<double>> per(G, std::vector<double>(D));
    std::vector<double> pooled(D, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      const auto& s = draws.snapshots[d];
      double wsum = 0.0;
      for (std::size_t g = 0; g < G; ++g) {
        const double v = reporting_probability_given_mark(s, g, y);
        per[g][d] = v;
        double w = 1.0;
        if (weighting == StratumWeighting::lambda) w = s.lambda(static_cast<Eigen::Index>(g));
        if (weighting == StratumWeighting::observed) w = static_cast<double>(draws.observed_counts[g]);
        pooled[d] += w * v;
        wsum += w;
      }
      pooled[d] /= wsum;
    }
    for (std::size_t g = 0; g < G; ++g) {
      const auto iv = central_interval(std::move(per[g]));
      out.push_back({draws.stratum_labels[g], y, iv.median, iv.lower, iv.upper});
    }
    const auto iv = central_interval(std::move(pooled));
    out.push_back({"all", y, iv.median, iv.lower, iv.upper});
  }
  return out;
}

std::vector<SummaryRow> reporting_prob_by_stratum(const PosteriorDraws& draws) {
  if (draws.snapshots.empty()) throw DomainError("reporting probabilities need parameter snapshots");
  std::vector<SummaryRow> rows;
  for (std::size_t g = 0; g < draws.num_strata(); ++g) {
    std::vector<double> values;
    values.reserve(draws.snapshots.size());
    for (const auto& s : draws.snapshots) values.push_back(reporting_probability(s, g));
    rows.push_back(summary_row(draws.stratum_labels[g], "P_report", std::move(values), std::nullopt));
  }
  return rows;
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& points) {
  csv::write_row(out, {"stratum", "y", "median", "q025", "q975"});
  for (const auto& p : points)
    csv::write_row(out, {p.stratum, csv::format(p.y), csv::format(p.median), csv::format(p.lower),
                         csv::format(p.upper)});
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0) || !(hi >= lo) || n == 0) throw DomainError("log grid needs 0 < lo <= hi and n > 0");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
  }
  return out;
}

CorrelationSummary augmented_correlation(const PosteriorDraws& draws, const Dataset& data) {
  const std::size_t R = data.num_lists();
  const std::size_t G = draws.num_strata();
  if (G != data.num_strata()) throw DomainError("draws and dataset disagree on the number of strata");
  const auto V = static_cast<Eigen::Index>(R + 1);

  // Observed cross-product sums per stratum; column R is x.
  std::vector<Eigen::MatrixXd> cross(G, Eigen::MatrixXd::Zero(V, V));
  std::vector<Eigen::VectorXd> sums(G, Eigen::VectorXd::Zero(V));
  Eigen::VectorXd v(V);
  for (const auto& r : data.records()) {
    for (std::size_t j = 0; j < R; ++j) v(static_cast<Eigen::Index>(j)) = r.pattern.captured_by(j) ? 1.0 : 0.0;
    v(V - 1) = r.log_mark;
    cross[r.stratum] += v * v.transpose();
    sums[r.stratum] += v;
  }

  CorrelationSummary out;
  out.names = data.list_names();
  out.names.push_back("x");
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(V, V);
  out.used = Eigen::MatrixXi::Zero(V, V);
  out.excluded = Eigen::MatrixXi::Zero(V, V);

  for (std::size_t d = 0; d < draws.num_draws(); ++d) {
    for (std::size_t g = 0; g < G; ++g) {
      const std::size_t i = draws.at(d, g);
      const double n = static_cast<double>(draws.observed_counts[g] + draws.n0[i]);
      Eigen::MatrixXd c = cross[g];
      Eigen::VectorXd s = sums[g];
      s(V - 1) += draws.sum_x0[i];
      c(V - 1, V - 1) += draws.sum_x0_sq[i];
      Eigen::VectorXd var(V);
      for (Eigen::Index a = 0; a < V; ++a) {
        const double mean = s(a) / n;
        var(a) = n >= 2.0 ? c(a, a) / n - mean * mean : 0.0;
        if (var(a) <= 1e-12 * std::max(1.0, c(a, a) / n)) var(a) = 0.0;
      }
      for (Eigen::Index a = 0; a < V; ++a) {
        for (Eigen::Index b = a; b < V; ++b) {
          if (var(a) == 0.0 || var(b) == 0.0) {
            ++out.excluded(a, b);
            continue;
          }
          const double cov = c(a, b) / n - (s(a) / n) * (s(b) / n);
          const double rho = a == b ? 1.0 : std::clamp(cov / std::sqrt(var(a) * var(b)), -1.0, 1.0);
          total(a, b) += rho;
          ++out.used(a, b);
        }
      }
    }
  }

  out.mean = Eigen::MatrixXd::Constant(V, V, kNaN);
  for (Eigen::Index a = 0; a < V; ++a) {
    for (Eigen::Index b = a; b < V; ++b) {
      if (out.used(a, b) > 0) out.mean(a, b) = a == b ? 1.0 : total(a, b) / out.used(a, b);
      out.mean(b, a) = out.mean(a, b);
      out.used(b, a) = out.used(a, b);
      out.excluded(b, a) = out.excluded(a, b);
    }
    out.mean(a, a) = 1.0;
  }
  return out;
}

void write_correlation_csv(std::ostream& out, const CorrelationSummary& corr) {
  csv::write_row(out, {"row", "column", "correlation", "used", "excluded"});
  const auto V = corr.mean.rows();
  for (Eigen::Index a = 0; a < V; ++a)
    for (Eigen::Index b = 0; b < V; ++b)
      csv::write_row(out, {corr.names[static_cast<std::size_t>(a)], corr.names[static_cast<std::size_t>(b)],
                           csv::format(corr.mean(a, b)), std::to_string(corr.used(a, b)),
                           std::to_string(corr.excluded(a, b))});
}

RhoSpec RhoSpec::parse(const std::string& text) {
  RhoSpec out;
  if (text == "uniform") {
    out.mode = Mode::uniform;
  } else if (text.rfind("beta:", 0) == 0) {
    const auto v = split_numbers(text.substr(5), "rho beta parameters");
    if (v.size() != 2) throw ConfigError("rho beta needs two parameters, e.g. beta:1.3,2.8");
    out.mode = Mode::beta;
    out.a = v[0];
    out.b = v[1];
  } else if (text.rfind("grid:", 0) == 0) {
    out.mode = Mode::grid;
    out.grid = split_numbers(text.substr(5), "rho grid");
  } else {
    throw ConfigError("unknown rho specification '" + text + "' (expected uniform, beta:a,b or grid:v1,v2,...)");
  }
  out.validate();
  return out;
}

std::string RhoSpec::to_string() const {
  switch (mode) {
    case Mode::uniform:
      return "uniform";
    case Mode::beta:
      return "beta:" + csv::format_exact(a) + "," + csv::format_exact(b);
    case Mode::grid: {
      std::string s = "grid:";
      for (std::size_t i = 0; i < grid.size(); ++i) s += (i ? "," : "") + csv::format_exact(grid[i]);
      return s;
    }
  }
  return {};
}

void RhoSpec::validate() const {
  if (mode == Mode::beta && !(a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b)))
    throw ConfigError("rho beta parameters must be positive");
  if (mode == Mode::grid) {
    if (grid.empty()) throw ConfigError("rho grid is empty");
    for (double r : grid)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rho grid values must lie in [0, 1]");
  }
}

std::vector<double> sample_rho(const RhoSpec& spec, std::size_t n, RandomStream& rng) {
  spec.validate();
  if (spec.mode == RhoSpec::Mode::grid) throw ConfigError("a rho grid is evaluated, not sampled");
  std::vector<double> out(n);
  for (auto& r : out) r = spec.mode == RhoSpec::Mode::uniform ? rng.uniform() : draw(dist::Beta{spec.a, spec.b}, rng);
  return out;
}

double mortality_rate(double rho, double fatalities, double arrivals) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw DomainError("interception rate outside [0, 1]");
  if (fatalities < 0.0 || arrivals < 0.0) throw DomainError("fatalities and arrivals must be non-negative");
  if (fatalities + arrivals == 0.0) return kNaN;
  return (1.0 - rho) * fatalities / (arrivals + fatalities);
}

MortalityInputs MortalityInputs::from_draws(const PosteriorDraws& draws, std::span<const double> arrivals) {
  if (arrivals.size() != draws.num_strata()) throw ConfigError("one arrivals value is needed per stratum");
  MortalityInputs in;
  in.strata = draws.stratum_labels;
  in.arrivals.assign(arrivals.begin(), arrivals.end());
  in.fatalities.assign(draws.num_strata(), std::vector<double>(draws.num_draws()));
  for (std::size_t g = 0; g < draws.num_strata(); ++g)
    for (std::size_t d = 0; d < draws.num_draws(); ++d) in.fatalities[g][d] = draws.total_mark(d, g);
  return in;
}

namespace {

std::vector<std::size_t> resample_indices(std::size_t available, std::size_t samples, RandomStream& rng) {
  std::vector<std::size_t> idx;
  if (samples <= available) {
    idx.resize(available);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < samples; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(available - i));
      std::swap(idx[i], idx[std::min(j, available - 1)]);
    }
    idx.resize(samples);
  } else {
    idx.resize(samples);
    for (auto& i : idx) i = std::min(available - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(available)));
  }
  return idx;
}

MortalityRow summarize_mr(std::string stratum, std::optional<double> rho, std::vector<double> values) {
  MortalityRow row;
  row.stratum = std::move(stratum);
  row.rho = rho;
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) {
    row.defined = false;
    row.mean = row.median = row.lower = row.upper = kNaN;
    return row;
  }
  row.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  const auto iv = central_interval(std::move(values));
  row.median = iv.median;
  row.lower = iv.lower;
  row.upper = iv.upper;
  return row;
}

}  // namespace

MortalityResult mortality_rate_mc(const MortalityInputs& inputs, const RhoSpec& rho, std::size_t samples,
                                  RandomStream& rng) {
  rho.validate();
  const std::size_t G = inputs.strata.size();
  if (inputs.fatalities.size() != G || inputs.arrivals.size() != G)
    throw ConfigError("mortality inputs disagree on the number of strata");
  if (G == 0) throw ConfigError("mortality inputs have no strata");
  const std::size_t D = inputs.fatalities.front().size();
  if (D == 0) throw DomainError("mortality rate needs at least one fatality draw");
  for (std::size_t g = 0; g < G; ++g) {
    if (inputs.fatalities[g].size() != D) throw ConfigError("fatality draws differ in length across strata");
    if (!(inputs.arrivals[g] >= 0.0)) throw ConfigError("arrivals must be non-negative");
  }

  // Column G is the pooled series.
  std::vector<std::vector<double>> F(G + 1, std::vector<double>(D, 0.0));
  std::vector<double> A(G + 1, 0.0);
  std::vector<std::string> names = inputs.strata;
  names.push_back("all");
  for (std::size_t g = 0; g < G; ++g) {
    F[g] = inputs.fatalities[g];
    A[g] = inputs.arrivals[g];
    A[G] += A[g];
    for (std::size_t d = 0; d < D; ++d) F[G][d] += F[g][d];
  }
  const std::size_t rows = G > 1 ? G + 1 : G;

  MortalityResult out;
  if (rho.mode == RhoSpec::Mode::grid) {
    for (double r : rho.grid) {
      for (std::size_t g = 0; g < rows; ++g) {
        std::vector<double> values(D);
        for (std::size_t d = 0; d < D; ++d) values[d] = mortality_rate(r, F[g][d], A[g]);
        out.samples[names[g] + " rho=" + csv::format(r)] = values;
        out.rows.push_back(summarize_mr(names[g], r, std::move(values)));
      }
    }
    return out;
  }

  if (samples == 0) throw ConfigError("mortality Monte Carlo needs at least one sample");
  for (std::size_t g = 0; g < rows; ++g) {
    const auto idx = resample_indices(D, samples, rng);
    const auto rhos = sample_rho(rho, samples, rng);
    std::vector<double> values(samples);
    for (std::size_t s = 0; s < samples; ++s) values[s] = mortality_rate(rhos[s], F[g][idx[s]], A[g]);
    out.samples[names[g]] = values;
    out.rows.push_back(summarize_mr(names[g], std::nullopt, std::move(values)));
  }
  return out;
}

void write_mortality_csv(std::ostream& out, const MortalityResult& result) {
  csv::write_row(out, {"stratum", "rho", "status", "mean", "median", "q025", "q975"});
  for (const auto& r : result.rows)
    csv::write_row(out, {r.stratum, r.rho ? csv::format(*r.rho) : std::string("NA"),
                         r.defined ? "ok" : "undefined", csv::format(r.mean), csv::format(r.median),
                         csv::format(r.lower), csv::format(r.upper)});
}

std::map<std::string, double> read_arrivals_csv(std::istream& in) {
  csv::Reader reader(in);
  std::map<std::string, double> out;
  bool first = true;
  while (auto row = reader.next()) {
    if (row->fields.size() != 2)
      throw DataError("arrivals file needs two columns (stratum, arrivals)", row->line);
    const auto value = csv::parse_double(row->fields[1]);
    if (first && !value) {
      first = false;
      continue;
    }
    first = false;
    if (!value || !std::isfinite(*value) || *value < 0.0)
      throw DataError("arrivals must be a non-negative number, got '" + row->fields[1] + "'", row->line);
    if (!out.emplace(row->fields[0], *value).second)
      throw DataError("duplicate arrivals entry for stratum '" + row->fields[0] + "'", row->line);
  }
  return out;
}

std::vector<double> align_arrivals(const std::map<std::string, double>& arrivals,
                                   const std::vector<std::string>& strata) {
  std::vector<double> out;
  for (const auto& s : strata) {
    auto it = arrivals.find(s);
    if (it == arrivals.end()) throw ConfigError("arrivals file has no entry for stratum '" + s + "'");
    out.push_back(it->second);
  }
  for (const auto& [label, value] : arrivals)
    if (std::find(strata.begin(), strata.end(), label) == strata.end())
      throw ConfigError("arrivals file names unknown stratum '" + label + "'");
  return out;
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (values.empty() || bins == 0) throw DomainError("histogram needs values and at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  Histogram h;
  h.lo = *lo_it;
  h.width = (*hi_it - *lo_it) / static_cast<double>(bins);
  if (!(h.width > 0.0)) {
    h.width = 1.0;
    bins = 1;
  }
  h.density.assign(bins, 0.0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - h.lo) / h.width);
    h.density[std::min(b, bins - 1)] += 1.0;
  }
  for (double& d : h.density) d /= static_cast<double>(values.size()) * h.width;
  return h;
}

}  // namespace msemark
