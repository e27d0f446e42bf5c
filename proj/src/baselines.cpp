#include "msemark/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace msemark {

namespace {

bool term_less(Term a, Term b) {
  const int ca = std::popcount(a), cb = std::popcount(b);
  if (ca != cb) return ca < cb;
  return a < b;
}

bool terms_less(const std::vector<Term>& a, const std::vector<Term>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), term_less);
}

// Row of the design matrix for one capture pattern.
Eigen::RowVectorXd design_row(std::uint32_t pattern, const std::vector<Term>& terms) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(terms.size() + 1));
  row(0) = 1.0;
  for (std::size_t t = 0; t < terms.size(); ++t)
    row(static_cast<Eigen::Index>(t + 1)) = (pattern & terms[t]) == terms[t] ? 1.0 : 0.0;
  return row;
}

Eigen::Index matrix_rank(const Eigen::MatrixXd& x) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  return qr.rank();
}

// Names the first column that adds nothing to the column space.
void require_full_rank(const Eigen::MatrixXd& x, const std::vector<Term>& terms, const char* what) {
  if (matrix_rank(x) == x.cols()) return;
  for (Eigen::Index c = 1; c <= x.cols(); ++c) {
    if (matrix_rank(x.leftCols(c)) < c) {
      const std::string name = c == 1 ? std::string("intercept") : term_label(terms[static_cast<std::size_t>(c - 2)]);
      throw FitRejected(std::string(what) + ": design is rank deficient at term " + name);
    }
  }
  throw FitRejected(std::string(what) + ": design is rank deficient");
}

}  // namespace

CaptureCounts capture_counts(const Dataset& data) {
  CaptureCounts out;
  out.per_incident.reserve(data.size());
  for (const auto& r : data.records()) {
    const int c = r.pattern.list_count();
    out.per_incident.push_back(c);
    if (c == 1) ++out.f1;
    if (c == 2) ++out.f2;
  }
  return out;
}

ChaoEstimate chao_estimate(const Dataset& data) {
  if (data.empty()) throw ConfigError("Chao estimator needs at least one observed incident");
  const auto counts = capture_counts(data);
  ChaoEstimate out;
  out.d0 = data.total_mark() / static_cast<double>(data.size());
  if (counts.f2 > 0) {
    const double f1 = static_cast<double>(counts.f1);
    out.n0 = f1 * f1 / (2.0 * static_cast<double>(counts.f2));
    out.D0 = *out.n0 * out.d0;
  }
  return out;
}

std::string term_label(Term term) {
  std::string out;
  for (int j = 0; j < 32; ++j) {
    if (!((term >> j) & 1U)) continue;
    if (!out.empty()) out += ":";
    out += "L" + std::to_string(j + 1);
  }
  return out;
}

std::vector<Term> main_effect_terms(std::size_t num_lists) {
  std::vector<Term> out;
  for (std::size_t j = 0; j < num_lists; ++j) out.push_back(Term{1} << j);
  return out;
}

std::vector<Term> pairwise_terms(std::size_t num_lists) {
  std::vector<Term> out = main_effect_terms(num_lists);
  for (std::size_t a = 0; a < num_lists; ++a)
    for (std::size_t b = a + 1; b < num_lists; ++b) out.push_back((Term{1} << a) | (Term{1} << b));
  return out;
}

std::vector<Term> HierarchicalModelSpec::terms() const {
  std::vector<Term> out = main_effect_terms(num_lists);
  out.insert(out.end(), pairs.begin(), pairs.end());
  out.insert(out.end(), triples.begin(), triples.end());
  return out;
}

bool HierarchicalModelSpec::is_hierarchical() const {
  for (Term t : triples) {
    for (int j = 0; j < 32; ++j) {
      if (!((t >> j) & 1U)) continue;
      const Term pair = t & ~(Term{1} << j);
      if (std::find(pairs.begin(), pairs.end(), pair) == pairs.end()) return false;
    }
  }
  return true;
}

std::string HierarchicalModelSpec::label() const {
  std::string out = "main";
  for (Term t : pairs) out += "+" + term_label(t);
  for (Term t : triples) out += "+" + term_label(t);
  return out;
}

std::vector<HierarchicalModelSpec> enumerate_hierarchical_models(std::size_t num_lists) {
  if (num_lists < 2 || num_lists > 6) throw ConfigError("hierarchical enumeration supports 2 to 6 lists");
  std::vector<Term> all_pairs, all_triples;
  for (std::size_t a = 0; a < num_lists; ++a)
    for (std::size_t b = a + 1; b < num_lists; ++b) {
      all_pairs.push_back((Term{1} << a) | (Term{1} << b));
      for (std::size_t c = b + 1; c < num_lists; ++c)
        all_triples.push_back((Term{1} << a) | (Term{1} << b) | (Term{1} << c));
    }

  std::vector<HierarchicalModelSpec> out;
  for (std::uint64_t pair_mask = 0; pair_mask < (std::uint64_t{1} << all_pairs.size()); ++pair_mask) {
    HierarchicalModelSpec base;
    base.num_lists = num_lists;
    for (std::size_t i = 0; i < all_pairs.size(); ++i)
      if ((pair_mask >> i) & 1U) base.pairs.push_back(all_pairs[i]);
    std::vector<Term> allowed;
    for (Term t : all_triples) {
      HierarchicalModelSpec probe = base;
      probe.triples = {t};
      if (probe.is_hierarchical()) allowed.push_back(t);
    }
    for (std::uint64_t triple_mask = 0; triple_mask < (std::uint64_t{1} << allowed.size()); ++triple_mask) {
      HierarchicalModelSpec spec = base;
      for (std::size_t i = 0; i < allowed.size(); ++i)
        if ((triple_mask >> i) & 1U) spec.triples.push_back(allowed[i]);
      out.push_back(std::move(spec));
    }
  }
  return out;
}

MarkEstimate fit_mark_regression(const Dataset& data, const std::vector<Term>& terms) {
  const std::size_t m = data.size();
  const std::size_t p = terms.size() + 1;
  if (m <= p)
    throw FitRejected("mark regression: " + std::to_string(m) + " observations cannot support " +
                      std::to_string(p) + " coefficients");

  // The design depends on the capture pattern only, so OLS reduces to a
  // weighted fit of per-pattern means plus the within-pattern sum of squares.
  std::map<std::uint32_t, std::pair<double, double>> cells;  // pattern -> (n, Σx)
  for (const auto& r : data.records()) {
    auto& c = cells[r.pattern.bits];
    c.first += 1.0;
    c.second += r.log_mark;
  }
  double within = 0.0, sum_sq = 0.0;
  for (const auto& r : data.records()) {
    sum_sq += r.log_mark * r.log_mark;
    const auto& c = cells[r.pattern.bits];
    const double d = r.log_mark - c.second / c.first;
    within += d * d;
  }

  const auto rows = static_cast<Eigen::Index>(cells.size());
  Eigen::MatrixXd x(rows, static_cast<Eigen::Index>(p));
  Eigen::MatrixXd xw(rows, static_cast<Eigen::Index>(p));
  Eigen::VectorXd yw(rows), n(rows), ybar(rows);
  Eigen::Index i = 0;
  for (const auto& [bits, c] : cells) {
    x.row(i) = design_row(bits, terms);
    n(i) = c.first;
    ybar(i) = c.second / c.first;
    const double w = std::sqrt(c.first);
    xw.row(i) = w * x.row(i);
    yw(i) = w * ybar(i);
    ++i;
  }
  require_full_rank(x, terms, "mark regression");

  MarkEstimate out;
  auto& fit = out.fit;
  fit.terms = terms;
  fit.observations = m;
  fit.beta = xw.colPivHouseholderQr().solve(yw);
  const Eigen::VectorXd resid = ybar - x * fit.beta;
  fit.rss = within + (n.array() * resid.array().square()).sum();
  const double md = static_cast<double>(m);
  fit.sigma2_unbiased = fit.rss / (md - static_cast<double>(p));
  fit.sigma2_ml = fit.rss / md;
  // an exact fit leaves only rounding noise in the residuals
  if (!(fit.rss > 1e-20 * std::max(1.0, sum_sq))) throw FitRejected("mark regression: zero residual variance");
  fit.log_likelihood = -0.5 * md * (std::log(2.0 * std::numbers::pi * fit.sigma2_ml) + 1.0);
  out.d0 = std::exp(fit.beta(0) + 0.5 * fit.sigma2_unbiased);
  return out;
}

CountEstimate fit_loglinear_counts(const PatternTable& table, const std::vector<Term>& terms) {
  const std::size_t r = table.num_lists;
  const std::size_t cells = (std::size_t{1} << r) - 1;
  const auto p = static_cast<Eigen::Index>(terms.size() + 1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cells), p);
  Eigen::VectorXd y(static_cast<Eigen::Index>(cells));
  for (std::uint32_t s = 1; s <= cells; ++s) {
    x.row(s - 1) = design_row(s, terms);
    auto it = table.counts.find(s);
    y(s - 1) = it == table.counts.end() ? 0.0 : static_cast<double>(it->second);
  }
  if (static_cast<std::size_t>(p) > cells)
    throw FitRejected("log-linear model: " + std::to_string(p) + " coefficients exceed " +
                      std::to_string(cells) + " observed cells");
  require_full_rank(x, terms, "log-linear model");

  auto deviance = [&](const Eigen::VectorXd& mu) {
    double d = 0.0;
    for (Eigen::Index c = 0; c < y.size(); ++c) {
      if (y(c) > 0.0) d += y(c) * std::log(y(c) / mu(c));
      d -= y(c) - mu(c);
    }
    return 2.0 * d;
  };

  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd mu = (x * gamma).array().exp().matrix();
  double dev = deviance(mu);
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= 100; ++iter) {
    const Eigen::VectorXd eta = x * gamma;
    const Eigen::VectorXd z = eta.array() + (y.array() - mu.array()) / mu.array();
    const Eigen::VectorXd sw = mu.array().sqrt();
    const Eigen::MatrixXd xw = sw.asDiagonal() * x;
    const Eigen::VectorXd zw = sw.cwiseProduct(z);
    Eigen::VectorXd next = xw.colPivHouseholderQr().solve(zw);
    Eigen::VectorXd next_mu = (x * next).array().exp().matrix();
    double next_dev = deviance(next_mu);
    for (int halving = 0; halving < 30 && !(next_dev <= dev * (1.0 + 1e-12) + 1e-12); ++halving) {
      next = 0.5 * (next + gamma);
      next_mu = (x * next).array().exp().matrix();
      next_dev = deviance(next_mu);
    }
    if (!std::isfinite(next_dev) || !next.allFinite()) throw FitRejected("log-linear model: IRLS diverged");
    const double change = std::abs(next_dev - dev) / (std::abs(next_dev) + 0.1);
    gamma = next;
    mu = next_mu;
    dev = next_dev;
    if (change < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged) throw FitRejected("log-linear model: IRLS did not converge in 100 iterations");

  CountEstimate out;
  auto& fit = out.fit;
  fit.terms = terms;
  fit.gamma = gamma;
  fit.deviance = dev;
  fit.iterations = iter;
  fit.fitted.assign(cells + 1, 0.0);
  double ll = 0.0;
  for (Eigen::Index c = 0; c < y.size(); ++c) {
    fit.fitted[static_cast<std::size_t>(c + 1)] = mu(c);
    ll += y(c) * std::log(mu(c)) - mu(c) - std::lgamma(y(c) + 1.0);
  }
  fit.log_likelihood = ll;
  out.n0 = std::exp(gamma(0));
  return out;
}

CountEstimate fit_loglinear_counts(const Dataset& data, const std::vector<Term>& terms) {
  return fit_loglinear_counts(pattern_table(data), terms);
}

double information_criterion(const MarkRegressionFit& fit, InformationCriterion ic) {
  // coefficients plus the residual variance
  const double k = static_cast<double>(fit.coefficients() + 1);
  const double penalty =
      ic == InformationCriterion::aic ? 2.0 : std::log(static_cast<double>(fit.observations));
  return -2.0 * fit.log_likelihood + penalty * k;
}

double information_criterion(const LogLinearFit& fit, std::size_t num_cells, InformationCriterion ic) {
  const double k = static_cast<double>(fit.coefficients());
  const double penalty = ic == InformationCriterion::aic ? 2.0 : std::log(static_cast<double>(num_cells));
  return -2.0 * fit.log_likelihood + penalty * k;
}

namespace {

struct Candidate {
  double score = std::numeric_limits<double>::infinity();
  std::size_t coefficients = 0;
  std::vector<Term> sorted_terms;
  const HierarchicalModelSpec* spec = nullptr;
  double estimate = 0.0;

  bool better_than(const Candidate& other) const {
    if (!other.spec) return true;
    if (score != other.score) return score < other.score;
    if (coefficients != other.coefficients) return coefficients < other.coefficients;
    return terms_less(sorted_terms, other.sorted_terms);
  }
};

std::vector<Term> sorted(std::vector<Term> terms) {
  std::sort(terms.begin(), terms.end(), term_less);
  return terms;
}

}  // namespace

std::pair<ICSelection, ICSelection> select_by_aic_bic(const Dataset& data) {
  const auto family = enumerate_hierarchical_models(data.num_lists());
  const auto table = pattern_table(data);
  const std::size_t cells = (std::size_t{1} << data.num_lists()) - 1;

  Candidate mark_best[2], count_best[2];
  const InformationCriterion criteria[2] = {InformationCriterion::aic, InformationCriterion::bic};
  for (const auto& spec : family) {
    const auto terms = spec.terms();
    const auto key = sorted(terms);
    try {
      const auto mark = fit_mark_regression(data, terms);
      for (int c = 0; c < 2; ++c) {
        Candidate cand{information_criterion(mark.fit, criteria[c]), mark.fit.coefficients(), key, &spec, mark.d0};
        if (cand.better_than(mark_best[c])) mark_best[c] = cand;
      }
    } catch (const FitRejected&) {
    }
    try {
      const auto count = fit_loglinear_counts(table, terms);
      for (int c = 0; c < 2; ++c) {
        Candidate cand{information_criterion(count.fit, cells, criteria[c]), count.fit.coefficients(), key, &spec,
                       count.n0};
        if (cand.better_than(count_best[c])) count_best[c] = cand;
      }
    } catch (const FitRejected&) {
    }
  }
  if (!mark_best[0].spec) throw FitRejected("no hierarchical mark model could be fit");
  if (!count_best[0].spec) throw FitRejected("no hierarchical log-linear model could be fit");

  ICSelection out[2];
  for (int c = 0; c < 2; ++c) {
    out[c].criterion = criteria[c];
    out[c].mark_model = *mark_best[c].spec;
    out[c].d0 = mark_best[c].estimate;
    out[c].count_model = *count_best[c].spec;
    out[c].n0 = count_best[c].estimate;
    out[c].D0 = out[c].n0 * out[c].d0;
  }
  return {out[0], out[1]};
}

ICSelection select_by_ic(const Dataset& data, InformationCriterion ic) {
  auto both = select_by_aic_bic(data);
  return ic == InformationCriterion::aic ? both.first : both.second;
}

}  // namespace msemark
