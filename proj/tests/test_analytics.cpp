#include <boost/math/distributions/beta.hpp>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "msemark/analytics.hpp"
#include "msemark/errors.hpp"
#include "msemark/experiments.hpp"
#include "support.hpp"

using namespace msemark;

namespace {

/// Draws for G strata from explicit per-draw missed counts and mark totals.
PosteriorDraws make_draws(const std::vector<std::string>& labels, const std::vector<std::int64_t>& m,
                          const std::vector<double>& ysum, const std::vector<std::vector<std::int64_t>>& n0,
                          const std::vector<std::vector<double>>& missed) {
  PosteriorDraws d;
  d.stratum_labels = labels;
  d.observed_counts = m;
  d.observed_mark_sums = ysum;
  for (std::size_t t = 0; t < n0.size(); ++t) {
    d.iterations.push_back(t + 1);
    for (std::size_t g = 0; g < labels.size(); ++g) {
      d.n0.push_back(n0[t][g]);
      d.missed_mark_sum.push_back(missed[t][g]);
      d.missed_mean_mark.push_back(n0[t][g] > 0 ? missed[t][g] / n0[t][g] : std::nan(""));
      d.sum_x0.push_back(0.0);
      d.sum_x0_sq.push_back(0.0);
    }
  }
  return d;
}

ParameterState one_cluster(double p_each, std::size_t lists, std::size_t strata = 1) {
  ParameterState s;
  s.pi = Eigen::MatrixXd::Ones(strata, 1);
  s.alpha = Eigen::VectorXd::Ones(strata);
  s.lambda = Eigen::VectorXd::Constant(strata, 100.0);
  s.p = Eigen::MatrixXd::Constant(1, lists, p_each);
  s.mu = Eigen::VectorXd::Constant(1, 2.0);
  s.sigma2 = Eigen::VectorXd::Constant(1, 1.0);
  return s;
}

}  // namespace

TEST_SUITE("analytics") {
  TEST_CASE("linear-interpolation quantiles") {
    const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
    CHECK(quantile(v, 0.0) == 1.0);
    CHECK(quantile(v, 1.0) == 4.0);
    CHECK(quantile(v, 0.25) == doctest::Approx(1.75));
    CHECK(quantile(v, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({7.0}, 0.3) == 7.0);
    CHECK_THROWS_AS(quantile({}, 0.5), DomainError);
    CHECK_THROWS_AS(quantile(v, 1.5), DomainError);
  }

  TEST_CASE("quantiles are monotone in the probability") {
    RandomStream rng(1);
    std::vector<double> v(997);
    for (auto& x : v) x = std::exp(rng.standard_normal());
    double prev = -INFINITY;
    for (int i = 0; i <= 1000; ++i) {
      const double q = quantile(v, i / 1000.0);
      CHECK(q >= prev);
      prev = q;
    }
    const auto iv = central_interval(v);
    CHECK(iv.lower <= iv.median);
    CHECK(iv.median <= iv.upper);
  }

  TEST_CASE("totals summary with pooled rows computed per draw") {
    // stratum a: n0 in {0, 10}; stratum b: n0 in {10, 0}; pooled is always 10
    const auto d = make_draws({"a", "b"}, {5, 7}, {50.0, 70.0}, {{0, 10}, {10, 0}, {0, 10}, {10, 0}},
                              {{0.0, 40.0}, {40.0, 0.0}, {0.0, 40.0}, {40.0, 0.0}});
    const auto rows = summarize_totals(d);
    REQUIRE(rows.size() == 12);
    CHECK(rows[0].stratum == "a");
    CHECK(rows[0].functional == "N");
    CHECK(*rows[0].observed_bound == 5.0);
    CHECK(rows[1].functional == "Y_tot");
    CHECK(*rows[1].observed_bound == 50.0);
    const auto& pooled_n0 = rows[10];
    CHECK(pooled_n0.stratum == "all");
    CHECK(pooled_n0.functional == "n0");
    CHECK(pooled_n0.median == 10.0);
    CHECK(pooled_n0.lower == 10.0);
    CHECK(pooled_n0.upper == 10.0);
    // the sum of the stratum medians would be 10 too, but the upper bounds would add to 20
    CHECK(rows[2].upper + rows[6].upper > pooled_n0.upper);
    CHECK(rows[8].median == 22.0);
    CHECK(*rows[8].observed_bound == 12.0);
    for (const auto& r : rows)
      if (r.observed_bound) CHECK(r.lower >= *r.observed_bound);
  }

  TEST_CASE("no missingness collapses to the observed values") {
    const auto d = make_draws({"all"}, {9}, {123.0}, {{0}, {0}, {0}}, {{0.0}, {0.0}, {0.0}});
    const auto rows = summarize_totals(d);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].median == 9.0);
    CHECK(rows[0].upper == 9.0);
    CHECK(rows[1].median == 123.0);
    const auto mm = expected_missing_mark(d);
    CHECK_FALSE(mm[0].available);
    CHECK(mm[0].excluded_fraction == 1.0);
    std::ostringstream out;
    write_missed_mean_mark_csv(out, mm);
    CHECK(out.str().find("NA") != std::string::npos);
    CHECK_THROWS_AS(summarize_totals(make_draws({"all"}, {9}, {1.0}, {{0}}, {{0.0}})), DomainError);
  }

  TEST_CASE("missed mean mark skips draws with nothing missed") {
    const auto d = make_draws({"all"}, {4}, {20.0}, {{0}, {2}, {4}}, {{0.0}, {10.0}, {40.0}});
    const auto mm = expected_missing_mark(d);
    CHECK(mm[0].available);
    CHECK(mm[0].excluded_fraction == doctest::Approx(1.0 / 3.0));
    CHECK(mm[0].mean == doctest::Approx(7.5));
    CHECK(mm[0].observed_mean == 5.0);
  }

  TEST_CASE("summary csv layout") {
    const auto d = make_draws({"all"}, {2}, {3.0}, {{1}, {2}}, {{1.0}, {2.0}});
    std::ostringstream out;
    write_summary_csv(out, summarize_totals(d));
    CHECK(out.str().rfind("stratum,functional,median,q025,q975,observed\nall,N,", 0) == 0);
  }

  TEST_CASE("reporting probability with symmetric capture") {
    // four lists each at 0.5: 1 - 0.5^4
    const auto s = one_cluster(0.5, 4);
    CHECK(reporting_probability(s, 0) == doctest::Approx(0.9375));
  }

  TEST_CASE("a single cluster gives a flat curve in the mark") {
    const auto s = one_cluster(0.3, 3);
    const double flat = reporting_probability(s, 0);
    for (double y : log_grid(1.0, 1000.0, 25)) CHECK(reporting_probability_given_mark(s, 0, y) == doctest::Approx(flat));
    ParameterState two = one_cluster(0.3, 3);
    two.pi = Eigen::MatrixXd::Constant(1, 2, 0.5);
    two.p = Eigen::MatrixXd::Constant(2, 3, 0.3);
    two.mu = Eigen::Vector2d(0.0, 5.0);
    two.sigma2 = Eigen::Vector2d(1.0, 2.0);
    for (double y : {1.0, 50.0, 1e4}) CHECK(reporting_probability_given_mark(two, 0, y) == doctest::Approx(flat));
  }

  TEST_CASE("reporting curve leans toward the cluster that fits the mark") {
    ParameterState s = one_cluster(0.3, 2);
    s.pi = Eigen::MatrixXd::Constant(1, 2, 0.5);
    s.p.resize(2, 2);
    s.p << 0.1, 0.1, 0.9, 0.9;
    s.mu = Eigen::Vector2d(0.0, 5.0);
    s.sigma2 = Eigen::Vector2d(0.5, 0.5);
    CHECK(reporting_probability_given_mark(s, 0, 1.0) == doctest::Approx(0.19).epsilon(1e-3));
    CHECK(reporting_probability_given_mark(s, 0, std::exp(5.0)) == doctest::Approx(0.99).epsilon(1e-3));
    CHECK_THROWS_AS(reporting_probability_given_mark(s, 0, 0.0), DomainError);
  }

  TEST_CASE("cross-stratum curve weights") {
    auto d = make_draws({"a", "b"}, {10, 30}, {1.0, 1.0}, {{0, 0}, {0, 0}}, {{0.0, 0.0}, {0.0, 0.0}});
    ParameterState s = one_cluster(0.5, 1, 2);
    s.pi.resize(2, 2);
    s.pi << 1.0, 0.0, 0.0, 1.0;
    s.p.resize(2, 1);
    s.p << 0.2, 0.6;
    s.mu = Eigen::Vector2d(1.0, 1.0);
    s.sigma2 = Eigen::Vector2d(1.0, 1.0);
    s.lambda = Eigen::Vector2d(300.0, 100.0);
    d.snapshots = {s, s};
    const std::vector<double> ys{5.0};
    auto pooled = [&](StratumWeighting w) { return reporting_prob_given_mark(d, ys, w).back().median; };
    CHECK(pooled(StratumWeighting::equal) == doctest::Approx(0.4));
    CHECK(pooled(StratumWeighting::observed) == doctest::Approx((10 * 0.2 + 30 * 0.6) / 40.0));
    CHECK(pooled(StratumWeighting::lambda) == doctest::Approx((300 * 0.2 + 100 * 0.6) / 400.0));
    const auto by = reporting_prob_by_stratum(d);
    CHECK(by[0].median == doctest::Approx(0.2));
    CHECK(by[1].functional == "P_report");
    d.snapshots.clear();
    CHECK_THROWS_AS(reporting_prob_given_mark(d, ys), DomainError);
  }

  TEST_CASE("log grid endpoints") {
    const auto g = log_grid(1.0, 1000.0, 4);
    CHECK(g[0] == doctest::Approx(1.0));
    CHECK(g[1] == doctest::Approx(10.0));
    CHECK(g[3] == doctest::Approx(1000.0));
  }

  TEST_CASE("correlation matrix of the completed data") {
    const Dataset d = read_incident_csv(testing::data_path("tiny.csv")).dataset;
    MCMCSettings s;
    s.iterations = 400;
    s.burn_in = 100;
    s.thin = 3;
    s.seed = 4;
    ModelConfig c;
    c.K = 8;
    const auto draws = run_chain(d, c, s);
    const auto corr = augmented_correlation(draws, d);
    REQUIRE(corr.names == std::vector<std::string>{"Agency", "Press", "Ngo", "x"});
    for (Eigen::Index a = 0; a < 4; ++a) {
      CHECK(corr.mean(a, a) == 1.0);
      for (Eigen::Index b = 0; b < 4; ++b) {
        CHECK(corr.mean(a, b) == corr.mean(b, a));
        CHECK(corr.mean(a, b) >= -1.0);
        CHECK(corr.mean(a, b) <= 1.0);
      }
    }
    std::ostringstream out;
    write_correlation_csv(out, corr);
    CHECK(out.str().find("x") != std::string::npos);
  }

  TEST_CASE("correlation with no imputation equals the observed Pearson matrix") {
    const Dataset d = read_incident_csv(testing::data_path("tiny.csv")).dataset;
    const auto draws = make_draws({"all"}, {60}, {d.total_mark()}, {{0}, {0}}, {{0.0}, {0.0}});
    const auto corr = augmented_correlation(draws, d);
    // list 1 against x, by hand
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (const auto& r : d.records()) {
      const double a = r.pattern.captured_by(0), b = r.log_mark;
      sx += a;
      sy += b;
      sxx += a * a;
      syy += b * b;
      sxy += a * b;
    }
    const double n = 60.0;
    const double rho = (sxy / n - sx * sy / (n * n)) /
                       std::sqrt((sxx / n - sx * sx / (n * n)) * (syy / n - sy * sy / (n * n)));
    CHECK(corr.mean(0, 3) == doctest::Approx(rho).epsilon(1e-10));
  }

  TEST_CASE("severity-driven detection shows positive mark-list correlation") {
    RandomStream rng(12);
    const auto rep = generate_setting(DGPSpec::setting_b(), rng);
    MCMCSettings s;
    s.iterations = 1500;
    s.burn_in = 500;
    s.thin = 5;
    s.seed = 12;
    ModelConfig c;
    c.K = 20;
    const auto draws = run_chain(rep.observed, c, s);
    const auto corr = augmented_correlation(draws, rep.observed);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(corr.mean(j, 4) > 0.0);
  }

  TEST_CASE("rho specifications") {
    CHECK(RhoSpec::parse("uniform").mode == RhoSpec::Mode::uniform);
    const auto b = RhoSpec::parse("beta:1.3,2.8");
    CHECK(b.a == 1.3);
    CHECK(b.b == 2.8);
    const auto g = RhoSpec::parse("grid:0,0.5,1");
    CHECK(g.grid == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(RhoSpec::parse(g.to_string()).grid == g.grid);
    CHECK_THROWS_AS(RhoSpec::parse("beta:1"), ConfigError);
    CHECK_THROWS_AS(RhoSpec::parse("normal"), ConfigError);
    CHECK_THROWS_AS(RhoSpec::parse("grid:1.5").validate(), ConfigError);
    CHECK_THROWS_AS(RhoSpec::parse("beta:0,1").validate(), ConfigError);
  }

  TEST_CASE("beta rho draws follow the requested distribution") {
    RandomStream rng(2);
    const auto xs = sample_rho(RhoSpec::parse("beta:1.3,2.8"), 50000, rng);
    boost::math::beta_distribution<> oracle(1.3, 2.8);
    CHECK(testing::ks_statistic(xs, [&](double x) { return cdf(oracle, x); }) < testing::ks_critical(xs.size()));
  }

  TEST_CASE("mortality rate arithmetic") {
    CHECK(mortality_rate(0.0, 300.0, 9700.0) == 0.03);
    CHECK(mortality_rate(0.5, 300.0, 9700.0) == doctest::Approx(0.015));
    CHECK(mortality_rate(1.0, 300.0, 9700.0) == 0.0);
    CHECK(std::isnan(mortality_rate(0.2, 0.0, 0.0)));
    CHECK_THROWS_AS(mortality_rate(1.2, 1.0, 1.0), DomainError);
    CHECK_THROWS_AS(mortality_rate(0.2, -1.0, 1.0), DomainError);
  }

  TEST_CASE("mortality grid is exact and decreasing in rho") {
    MortalityInputs in;
    in.strata = {"2019", "2020"};
    in.fatalities = {{300.0, 300.0}, {100.0, 140.0}};
    in.arrivals = {9700.0, 4860.0};
    RandomStream rng(3);
    const auto res = mortality_rate_mc(in, RhoSpec::parse("grid:0,0.25,0.5,0.75,1"), 0, rng);
    REQUIRE(res.rows.size() == 15);
    CHECK(res.rows[0].stratum == "2019");
    CHECK(*res.rows[0].rho == 0.0);
    CHECK(res.rows[0].median == 0.03);
    CHECK(res.rows[2].stratum == "all");
    // pooled fatalities are 400 and 440 draw-wise; the median averages the two ratios
    CHECK(res.rows[2].median == doctest::Approx(0.5 * (400.0 / 14960.0 + 440.0 / 15000.0)));
    for (std::size_t g = 0; g < 3; ++g)
      for (std::size_t i = 1; i < 5; ++i) CHECK(res.rows[i * 3 + g].median < res.rows[(i - 1) * 3 + g].median);
    CHECK(res.samples.count("2019 rho=0.5") == 1);
  }

  TEST_CASE("mortality under uniform rho halves the expected ratio") {
    MortalityInputs in;
    in.strata = {"all"};
    in.fatalities = {{100.0, 200.0, 300.0, 400.0}};
    in.arrivals = {1000.0};
    RandomStream rng(5);
    const std::size_t n = 400000;
    const auto res = mortality_rate_mc(in, RhoSpec::parse("uniform"), n, rng);
    REQUIRE(res.rows.size() == 1);
    double ratio = 0.0;
    for (double f : in.fatalities[0]) ratio += f / (1000.0 + f) / 4.0;
    const auto& v = res.samples.at("all");
    CHECK(v.size() == n);
    CHECK(res.rows[0].mean == doctest::Approx(0.5 * ratio).epsilon(5.0 * std::sqrt(testing::variance(v) / n) / (0.5 * ratio)));
    for (double x : v) {
      CHECK(x >= 0.0);
      CHECK(x < 1.0);
    }
  }

  TEST_CASE("mortality subsamples draws without replacement when there are enough") {
    MortalityInputs in;
    in.strata = {"all"};
    in.fatalities = {std::vector<double>(10)};
    for (int i = 0; i < 10; ++i) in.fatalities[0][i] = 100.0 * (i + 1);
    in.arrivals = {1000.0};
    RandomStream rng(6);
    // rho pinned near 1/2 so each value identifies the fatality draw it used
    const auto res = mortality_rate_mc(in, RhoSpec::parse("beta:1e7,1e7"), 10, rng);
    std::set<int> used;
    for (double v : res.samples.at("all")) {
      int best = 0;
      for (int i = 1; i < 10; ++i)
        if (std::abs(0.5 * in.fatalities[0][i] / (1000.0 + in.fatalities[0][i]) - v) <
            std::abs(0.5 * in.fatalities[0][best] / (1000.0 + in.fatalities[0][best]) - v))
          best = i;
      used.insert(best);
    }
    CHECK(used.size() == 10);
    CHECK_THROWS_AS(mortality_rate_mc(in, RhoSpec::parse("uniform"), 0, rng), ConfigError);
  }

  TEST_CASE("arrivals files") {
    std::istringstream good("stratum,arrivals\n2019,11471\n2020,34154\n");
    const auto a = read_arrivals_csv(good);
    CHECK(a.at("2020") == 34154.0);
    CHECK(align_arrivals(a, {"2019", "2020"}) == std::vector<double>{11471.0, 34154.0});
    CHECK_THROWS_AS(align_arrivals(a, {"2019", "2021"}), ConfigError);
    CHECK_THROWS_AS(align_arrivals(a, {"2019"}), ConfigError);
    std::istringstream no_header("2019,5\n");
    CHECK(read_arrivals_csv(no_header).at("2019") == 5.0);
    std::istringstream dup("2019,5\n2019,6\n");
    CHECK_THROWS_AS(read_arrivals_csv(dup), DataError);
    std::istringstream neg("2019,-5\n");
    CHECK_THROWS_AS(read_arrivals_csv(neg), DataError);
  }

  TEST_CASE("histogram integrates to one") {
    std::vector<double> v;
    for (int i = 0; i < 1000; ++i) v.push_back(i * 0.001);
    const auto h = histogram(v, 20);
    double area = 0.0;
    for (double d : h.density) area += d * h.width;
    CHECK(area == doctest::Approx(1.0));
  }
}
