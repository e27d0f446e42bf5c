#include <fstream>
#include <sstream>

#include "doctest.h"
#include "msemark/csv.hpp"
#include "msemark/errors.hpp"
#include "msemark/io.hpp"
#include "support.hpp"

using namespace msemark;

namespace {

PosteriorDraws sample_draws() {
  const Dataset d = stratify(read_incident_csv(testing::data_path("tiny.csv")).dataset, StratifyScheme::by_year);
  MCMCSettings s;
  s.iterations = 200;
  s.burn_in = 50;
  s.thin = 5;
  s.seed = 8;
  ModelConfig c;
  c.K = 6;
  return run_chain(d, c, s);
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("draws round-trip exactly") {
    const auto d = sample_draws();
    std::stringstream buf;
    write_draws_csv(buf, d);
    const auto back = read_draws_csv(buf);
    CHECK(back.stratum_labels == d.stratum_labels);
    CHECK(back.observed_counts == d.observed_counts);
    CHECK(back.observed_mark_sums == d.observed_mark_sums);
    CHECK(back.iterations == d.iterations);
    CHECK(back.n0 == d.n0);
    CHECK(back.missed_mark_sum == d.missed_mark_sum);
    CHECK(back.sum_x0 == d.sum_x0);
    CHECK(back.sum_x0_sq == d.sum_x0_sq);
    std::stringstream again;
    write_draws_csv(again, back);
    std::stringstream first;
    write_draws_csv(first, d);
    CHECK(again.str() == first.str());
  }

  TEST_CASE("truncated or tampered draws are data errors") {
    const auto d = sample_draws();
    std::stringstream buf;
    write_draws_csv(buf, d);
    const std::string text = buf.str();

    std::istringstream cut_mid(text.substr(0, text.size() - 7));
    CHECK_THROWS_AS(read_draws_csv(cut_mid), DataError);

    // drop the final line: one stratum of the last draw is missing
    const auto last = text.rfind('\n', text.size() - 2);
    std::istringstream cut_row(text.substr(0, last + 1));
    CHECK_THROWS_AS(read_draws_csv(cut_row), DataError);

    std::string bad = text;
    const auto pos = bad.find('\n') + 1;
    bad.insert(pos, "x");
    std::istringstream tampered(bad);
    CHECK_THROWS_AS(read_draws_csv(tampered), DataError);

    std::istringstream wrong_header("a,b,c\n1,2,3\n");
    CHECK_THROWS_AS(read_draws_csv(wrong_header), DataError);
    std::istringstream empty("");
    CHECK_THROWS_AS(read_draws_csv(empty), DataError);
  }

  TEST_CASE("trace has one row per sweep") {
    const auto d = sample_draws();
    MCMCSettings s;
    s.iterations = 200;
    s.burn_in = 50;
    s.thin = 5;
    std::ostringstream out;
    write_trace_csv(out, d, s);
    std::istringstream in(out.str());
    csv::Reader reader(in);
    reader.next();
    std::size_t lines = 0, retained = 0;
    while (auto row = reader.next()) {
      ++lines;
      retained += row->fields[1] == "1";
    }
    CHECK(lines == 200);
    CHECK(retained == 30);
  }

  TEST_CASE("key-value config parsing") {
    std::istringstream in("# comment\nK = 40\nc0=3.5  # trailing\n\nm0 = auto\nalpha_prior = fixed:2\nseed = 18446744073709551615\n");
    auto f = KeyValueFile::parse(in);
    CHECK(f.entries.at("K").value == "40");
    CHECK(f.entries.at("c0").line == 3);
    ModelConfig m;
    m.m0 = 1.0;
    MCMCSettings s;
    apply_config(f, m, s);
    CHECK(m.K == 40);
    CHECK(m.c0 == 3.5);
    CHECK_FALSE(m.m0);
    CHECK(m.alpha_prior == AlphaPrior::held_at(2.0));
    CHECK(s.seed == 18446744073709551615ULL);
    CHECK(f.entries.empty());
    CHECK_NOTHROW(reject_unknown_keys(f));
  }

  TEST_CASE("config errors name the line") {
    std::istringstream dup("K = 1\nK = 2\n");
    CHECK_THROWS_AS(KeyValueFile::parse(dup), ConfigError);
    std::istringstream noeq("K 1\n");
    CHECK_THROWS_AS(KeyValueFile::parse(noeq), ConfigError);
    std::istringstream badval("thin = -3\n");
    auto f = KeyValueFile::parse(badval);
    ModelConfig m;
    MCMCSettings s;
    try {
      apply_config(f, m, s);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    std::istringstream unknown("K = 4\nbogus = 1\n");
    auto g = KeyValueFile::parse(unknown);
    apply_config(g, m, s);
    try {
      reject_unknown_keys(g);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(KeyValueFile::read("/nonexistent/config.txt"), ConfigError);
  }

  TEST_CASE("resolved config parses back to the same settings") {
    ModelConfig m;
    m.K = 33;
    m.c0 = 1.0 / 3.0;
    m.s0_sq = 2.25;
    m.alpha_prior = AlphaPrior::gamma(0.25, 0.25);
    m.round_imputed_marks = true;
    MCMCSettings s;
    s.iterations = 1234;
    s.burn_in = 34;
    s.thin = 3;
    s.seed = 987654321;
    s.keep_snapshots = true;
    std::istringstream in(to_key_value(m, s));
    auto f = KeyValueFile::parse(in);
    ModelConfig m2;
    MCMCSettings s2;
    apply_config(f, m2, s2);
    CHECK(f.entries.empty());
    CHECK(m2.K == m.K);
    CHECK(m2.c0 == m.c0);
    CHECK(m2.s0_sq == m.s0_sq);
    CHECK_FALSE(m2.m0);
    CHECK(m2.alpha_prior == m.alpha_prior);
    CHECK(m2.round_imputed_marks);
    CHECK(s2.iterations == 1234);
    CHECK(s2.burn_in == 34);
    CHECK(s2.thin == 3);
    CHECK(s2.seed == 987654321);
    CHECK(s2.keep_snapshots);
    CHECK(to_key_value(m2, s2) == to_key_value(m, s));
  }

  TEST_CASE("alpha prior text") {
    CHECK(AlphaPrior::parse("gamma:1,1") == AlphaPrior::gamma(1, 1));
    CHECK(AlphaPrior::parse(AlphaPrior::held_at(0.5).to_string()) == AlphaPrior::held_at(0.5));
    CHECK_THROWS_AS(AlphaPrior::parse("gamma:1"), ConfigError);
    CHECK_THROWS_AS(AlphaPrior::parse("lognormal:0,1"), ConfigError);
  }

  TEST_CASE("sha256 of a known file") {
    testing::ScratchDir dir("io");
    {
      std::ofstream f(dir / "abc.txt", std::ios::binary);
      f << "abc";
    }
    CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK_THROWS_AS(sha256_file(dir / "missing"), Error);
  }

  TEST_CASE("timestamps and manifest") {
    CHECK(utc_timestamp(std::chrono::system_clock::time_point{}) == "1970-01-01T00:00:00Z");
    RunManifest m;
    m.command = "fit";
    m.arguments = {"--data", "x.csv"};
    m.seed = 7;
    m.input_digests["x.csv"] = "00";
    m.outputs = {"summary.csv"};
    const auto j = m.to_json();
    CHECK(j.at("command") == "fit");
    CHECK(j.at("seed") == 7);
    CHECK(j.at("version") == std::string(version_string()));
    CHECK(j.at("inputs").at("x.csv").at("sha256") == "00");
    CHECK(j.at("outputs").size() == 1);
  }

  TEST_CASE("json views of the settings") {
    ModelConfig m;
    const auto j = to_json(m);
    CHECK(j.at("K") == 100);
    CHECK(j.at("m0") == "auto");
    MCMCSettings s;
    CHECK(to_json(s).at("thin") == 4);
    const auto diag = chain_diagnostics(sample_draws());
    CHECK(diag.contains("clamp_events"));
  }
}
