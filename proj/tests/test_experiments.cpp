#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "msemark/csv.hpp"
#include "msemark/errors.hpp"
#include "msemark/experiments.hpp"
#include "support.hpp"

using namespace msemark;

namespace {

MCMCSettings quick(std::uint64_t seed) {
  MCMCSettings s;
  s.iterations = 300;
  s.burn_in = 100;
  s.thin = 2;
  s.seed = seed;
  return s;
}

ReplicateResult fixture_result(std::size_t r, double n0_hat, double D0_hat, std::int64_t n0, double D0,
                               std::optional<Interval> n0_iv = {}, std::optional<Interval> D0_iv = {}) {
  ReplicateResult res;
  res.setting = "A";
  res.replicate = r;
  res.method = Method::mixture;
  res.truth.n0_true = n0;
  res.truth.D0_true = D0;
  res.estimate.defined = true;
  res.estimate.n0 = n0_hat;
  res.estimate.D0 = D0_hat;
  res.estimate.n0_interval = n0_iv;
  res.estimate.D0_interval = D0_iv;
  return res;
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("built-in settings are valid") {
    for (const auto& name : {"A", "B", "C"}) {
      const auto s = DGPSpec::by_name(name);
      CHECK_NOTHROW(s.validate());
      CHECK(s.N == 2500);
      CHECK(s.num_lists() == 4);
    }
    CHECK(DGPSpec::setting_a().missed_probability() == doctest::Approx(0.6 * 0.9 * 0.88 * 0.8));
    CHECK_THROWS_AS(DGPSpec::by_name("D"), ConfigError);
    auto bad = DGPSpec::setting_b();
    bad.pi = {0.5, 0.3, 0.3};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = DGPSpec::setting_a();
    bad.p(0, 0) = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("setting A observed count matches its expectation") {
    const auto spec = DGPSpec::setting_a();
    const double p_obs = 1.0 - spec.missed_probability();
    const std::size_t reps = 200;
    std::vector<double> m(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      RandomStream rng(derive_seed(77, {r}));
      m[r] = static_cast<double>(generate_setting(spec, rng).observed.size());
    }
    const double expected = 2500.0 * p_obs;
    const double se = std::sqrt(2500.0 * p_obs * (1.0 - p_obs) / reps);
    CHECK(std::abs(testing::mean(m) - expected) < 3.0 * se);
  }

  TEST_CASE("generated replicates satisfy the truth identities") {
    for (const auto& name : {"A", "B", "C"}) {
      RandomStream rng(5);
      const auto rep = generate_setting(DGPSpec::by_name(name), rng);
      const auto& d = rep.observed;
      CHECK(static_cast<std::int64_t>(d.size()) + rep.truth.n0_true == 2500);
      CHECK(d.total_mark() + rep.truth.D0_true == doctest::Approx(rep.truth.population_mark_sum).epsilon(1e-12));
      std::int64_t by_class = 0;
      for (auto v : rep.truth.missed_by_class) by_class += v;
      CHECK(by_class == rep.truth.n0_true);
      CHECK(d.list_names() == std::vector<std::string>{"L1", "L2", "L3", "L4"});
      for (const auto& r : d.records()) {
        CHECK(r.mark >= 1.0);
        CHECK(r.mark == std::round(r.mark));
        CHECK_FALSE(r.pattern.empty());
      }
    }
  }

  TEST_CASE("a list that sees everything leaves nothing missed") {
    auto spec = DGPSpec::setting_b();
    for (Eigen::Index k = 0; k < spec.p.rows(); ++k) spec.p(k, 2) = 1.0;
    RandomStream rng(8);
    const auto rep = generate_setting(spec, rng);
    CHECK(rep.truth.n0_true == 0);
    CHECK(rep.truth.D0_true == 0.0);
    CHECK(rep.observed.size() == 2500);
  }

  TEST_CASE("setting B misses mostly low-severity incidents") {
    const auto spec = DGPSpec::setting_b();
    std::vector<double> q(3), share(3);
    double total = 0.0;
    for (int k = 0; k < 3; ++k) {
      q[k] = 1.0;
      for (int j = 0; j < 4; ++j) q[k] *= 1.0 - spec.p(k, j);
      share[k] = spec.pi[k] * q[k];
      total += share[k];
    }
    double missed = 0.0, class3 = 0.0;
    for (std::uint64_t r = 0; r < 100; ++r) {
      RandomStream rng(derive_seed(3, {r}));
      const auto rep = generate_setting(spec, rng);
      missed += static_cast<double>(rep.truth.n0_true);
      class3 += static_cast<double>(rep.truth.missed_by_class[2]);
    }
    const double expected = share[2] / total;
    CHECK(expected > 0.6);
    CHECK(class3 / missed == doctest::Approx(expected).epsilon(0.02));
  }

  TEST_CASE("method names") {
    CHECK(parse_methods("all").size() == 6);
    CHECK(parse_methods("naive,mixture") == std::vector<Method>{Method::naive, Method::mixture});
    for (Method m : all_methods()) CHECK(parse_method(to_string(m)) == m);
    CHECK_THROWS_AS(parse_method("bayes"), ConfigError);
  }

  TEST_CASE("aggregate on a hand-built set of replicates") {
    std::vector<ReplicateResult> rs;
    rs.push_back(fixture_result(0, 110, 1100, 100, 1000, Interval{110, 90, 120}, Interval{1100, 900, 1200}));
    rs.push_back(fixture_result(1, 90, 950, 100, 1000, Interval{90, 80, 99}, Interval{950, 900, 1000}));
    rs.push_back(fixture_result(2, 200, 2000, 200, 2000, Interval{200, 150, 250}, Interval{2000, 1500, 2500}));
    rs.push_back(fixture_result(3, 50, 500, 0, 0.0));  // zero truth: excluded
    auto undefined = fixture_result(4, 0, 0, 100, 1000);
    undefined.estimate.defined = false;
    rs.push_back(undefined);
    const auto sums = aggregate(rs, {"A"}, {Method::mixture});
    REQUIRE(sums.size() == 1);
    const auto& s = sums[0];
    CHECK(s.used == 3);
    CHECK(s.excluded == 2);
    CHECK(s.rel_error_n0 == doctest::Approx((0.1 - 0.1 + 0.0) / 3.0));
    CHECK(s.rel_error_D0 == doctest::Approx((0.1 - 0.05 + 0.0) / 3.0));
    CHECK(s.log_rmse_n0 == doctest::Approx(std::log(std::sqrt(200.0 / 3.0))));
    CHECK(s.log_rmse_D0 == doctest::Approx(std::log(std::sqrt((10000.0 + 2500.0) / 3.0))));
    CHECK(*s.coverage_n0 == doctest::Approx(2.0 / 3.0));
    CHECK(*s.coverage_D0 == doctest::Approx(1.0));
  }

  TEST_CASE("zero replicates gives empty but well-formed outputs") {
    StudyOptions opt;
    opt.settings = {DGPSpec::setting_a(), DGPSpec::setting_b()};
    opt.replicates = 0;
    opt.mcmc = quick(1);
    const auto res = run_replication_study(opt);
    CHECK(res.replicates.empty());
    CHECK(res.summaries.size() == 12);
    for (const auto& s : res.summaries) CHECK(s.used == 0);
    std::ostringstream out;
    write_aggregate_csv(out, res);
    std::istringstream in(out.str());
    csv::Reader reader(in);
    const auto header = reader.next();
    REQUIRE(header);
    CHECK(header->fields == aggregate_csv_columns({"A", "B"}));
    CHECK(header->fields == std::vector<std::string>{"panel", "method", "A_D0", "A_n0", "B_D0", "B_n0", "overall_D0",
                                                     "overall_n0"});
  }

  TEST_CASE("study results do not depend on the number of workers") {
    StudyOptions opt;
    opt.settings = {DGPSpec::setting_a(), DGPSpec::setting_c()};
    opt.methods = {Method::naive, Method::regression_main, Method::mixture};
    opt.replicates = 3;
    opt.model.K = 10;
    opt.mcmc = quick(2024);
    opt.jobs = 1;
    const auto one = run_replication_study(opt);
    opt.jobs = 4;
    const auto four = run_replication_study(opt);
    std::ostringstream a, b;
    write_replicates_csv(a, one);
    write_replicates_csv(b, four);
    CHECK(a.str() == b.str());
    CHECK(one.replicates.size() == 2 * 3 * 3);
    std::set<std::uint64_t> seeds;
    for (const auto& r : one.replicates) seeds.insert(r.seed);
    CHECK(seeds.size() == 6);
  }

  TEST_CASE("presets") {
    const auto desk = StudyPreset::desk();
    CHECK(desk.replicates == 20);
    CHECK(desk.mcmc.iterations == 20000);
    CHECK(desk.mcmc.burn_in == 4000);
    CHECK(desk.mcmc.thin == 4);
    const auto full = StudyPreset::paper();
    CHECK(full.replicates == 200);
    CHECK(full.mcmc.burn_in == 25000);
    CHECK(full.mcmc.thin == 6);
    CHECK(full.mcmc.retained() == 250000);
    CHECK_THROWS_AS(StudyPreset::by_name("huge"), ConfigError);
  }

  TEST_CASE("prior grid layout") {
    const auto grid = prior_grid();
    REQUIRE(grid.size() == 108);
    CHECK(grid[0].K == 80);
    CHECK(grid[0].c0 == 3.5);
    CHECK(grid[0].C0 == 1.0);
    CHECK(grid[0].alpha == AlphaPrior::held_at(1.0));
    std::set<std::string> labels;
    std::size_t baselines = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      CHECK(grid[i].index == i);
      labels.insert(grid[i].label());
      baselines += grid[i].baseline;
    }
    CHECK(labels.size() == 108);
    CHECK(baselines == 1);
    const auto base = baseline_grid();
    REQUIRE(base.size() == 1);
    CHECK(base[0].K == 100);
    CHECK(base[0].c0 == 4.0);
    CHECK(base[0].C0 == 1.0);
    CHECK(base[0].alpha == AlphaPrior::gamma(1.0, 1.0));
    const auto cfg = grid[107].apply(ModelConfig{});
    CHECK(cfg.K == 120);
    CHECK(cfg.c0 == 4.5);
    CHECK(cfg.C0 == 2.0);
    CHECK(cfg.alpha_prior == AlphaPrior::gamma(2.0, 4.0));
  }

  TEST_CASE("baseline-only sensitivity reproduces a plain fit") {
    const Dataset d = read_incident_csv(testing::data_path("tiny.csv")).dataset;
    const auto mcmc = quick(99);
    const auto rows = run_sensitivity(d, baseline_grid(), ModelConfig{}, mcmc);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].ok);
    const auto draws = run_chain(d, baseline_grid()[0].apply(ModelConfig{}), mcmc);
    const auto iv = central_interval(draws.pooled_missed_counts());
    CHECK(rows[0].missed_count.median == iv.median);
    CHECK(rows[0].missed_count.upper == iv.upper);
    CHECK(rows[0].missed_marks.median == central_interval(draws.pooled_missed_marks()).median);
  }

  TEST_CASE("sensitivity rows record failures instead of aborting") {
    std::vector<IncidentRecord> recs;
    for (int i = 0; i < 5; ++i) recs.push_back({"r" + std::to_string(i), 0, {1}, 3.0, 0.0, std::nullopt});
    const Dataset flat(recs, {"A"}, {"all"});
    auto grid = prior_grid();
    grid.resize(2);
    const auto rows = run_sensitivity(flat, grid, ModelConfig{}, quick(1), 2);
    for (const auto& r : rows) {
      CHECK_FALSE(r.ok);
      CHECK_FALSE(r.error.empty());
    }
    std::ostringstream out;
    write_sensitivity_csv(out, rows);
    CHECK(out.str().find("failed") != std::string::npos);
  }

  TEST_CASE("a larger C0 widens the upper tail of missed marks") {
    RandomStream rng(41);
    auto spec = DGPSpec::setting_b();
    spec.N = 800;
    const Dataset d = generate_setting(spec, rng).observed;
    std::vector<PriorGridEntry> low, high;
    for (const auto& e : prior_grid())
      if (e.c0 == 4.0 && e.C0 == 1.0) low.push_back(e);
      else if (e.c0 == 4.0 && e.C0 == 2.0) high.push_back(e);
    REQUIRE(low.size() == 12);
    MCMCSettings s;
    s.iterations = 1500;
    s.burn_in = 500;
    s.thin = 2;
    s.seed = 41;
    const auto a = run_sensitivity(d, low, ModelConfig{}, s, 4);
    const auto b = run_sensitivity(d, high, ModelConfig{}, s, 4);
    int wins = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].ok);
      REQUIRE(b[i].ok);
      wins += b[i].missed_marks.upper > a[i].missed_marks.upper;
    }
    CHECK(wins > 6);
  }

  TEST_CASE("parallel_for runs every index and rethrows") {
    std::vector<int> hit(100, 0);
    parallel_for(100, 7, [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit) CHECK(h == 1);
    CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                      if (i == 4) throw DataError("boom");
                    }),
                    DataError);
  }
}
