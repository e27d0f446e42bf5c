#include <cmath>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "msemark/csv.hpp"
#include "msemark/random.hpp"

using namespace msemark;

TEST_SUITE("csv") {
  TEST_CASE("reader handles quotes, doubled quotes and CRLF") {
    std::istringstream in("a,b,c\r\n\"x, y\",\"say \"\"hi\"\"\",3\r\n\n4,5,6");
    csv::Reader r(in);
    auto h = r.next();
    REQUIRE(h);
    CHECK(h->fields == std::vector<std::string>{"a", "b", "c"});
    auto row = r.next();
    REQUIRE(row);
    CHECK(row->line == 2);
    CHECK(row->fields == std::vector<std::string>{"x, y", "say \"hi\"", "3"});
    auto last = r.next();
    REQUIRE(last);
    CHECK(last->line == 4);
    CHECK(r.last_row_unterminated());
    CHECK_FALSE(r.next());
  }

  TEST_CASE("quoted field may span lines") {
    std::istringstream in("a,b\n\"one\ntwo\",2\n");
    csv::Reader r(in);
    r.next();
    auto row = r.next();
    REQUIRE(row);
    CHECK(row->fields[0] == "one\ntwo");
    CHECK_FALSE(r.last_row_unterminated());
  }

  TEST_CASE("write_row escapes what needs escaping") {
    std::ostringstream out;
    csv::write_row(out, {"plain", "a,b", "q\"q", ""});
    CHECK(out.str() == "plain,\"a,b\",\"q\"\"q\",\n");
    std::istringstream in(out.str());
    csv::Reader r(in);
    CHECK(r.next()->fields == std::vector<std::string>{"plain", "a,b", "q\"q", ""});
  }

  TEST_CASE("format_exact round-trips random doubles") {
    RandomStream rng(11);
    for (int i = 0; i < 20000; ++i) {
      const double scale = std::pow(10.0, static_cast<double>(rng.next_u64() % 40) - 20.0);
      const double v = (rng.uniform() - 0.5) * scale;
      const auto back = csv::parse_double(csv::format_exact(v));
      REQUIRE(back);
      CHECK(*back == v);
    }
    CHECK(csv::format_exact(std::numeric_limits<double>::denorm_min()) != "0");
  }

  TEST_CASE("non-finite values and NA") {
    CHECK(csv::format_exact(std::nan("")) == "NA");
    CHECK(std::isnan(*csv::parse_double("NA")));
    CHECK(*csv::parse_double("inf") == HUGE_VAL);
    CHECK(csv::format(-HUGE_VAL) == "-inf");
    CHECK_FALSE(csv::parse_double(""));
    CHECK_FALSE(csv::parse_double("1.5x"));
    CHECK(*csv::parse_double(" 2.5 ") == 2.5);
  }

  TEST_CASE("summary format keeps ten significant digits") {
    CHECK(csv::format(1.0 / 3.0) == "0.3333333333");
    CHECK(csv::format(25712) == "25712");
  }

  TEST_CASE("parse_int and find_column") {
    CHECK(*csv::parse_int("42") == 42);
    CHECK_FALSE(csv::parse_int("4.2"));
    std::vector<std::string> header{"id", "y", "L1"};
    CHECK(*csv::find_column(header, "y") == 1);
    CHECK_FALSE(csv::find_column(header, "date"));
  }
}
