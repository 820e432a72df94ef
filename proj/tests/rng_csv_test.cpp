#include "doctest.h"

#include <cmath>
#include <set>

#include "cardecon/csv.hpp"
#include "cardecon/rng.hpp"

using namespace cardecon;

TEST_SUITE("rng") {
  TEST_CASE("streams are deterministic and label-separated") {
    CounterRng a(7, "alpha"), b(7, "alpha"), c(7, "beta"), d(8, "alpha");
    for (int i = 0; i < 100; ++i) {
      const auto va = a.next_u64();
      CHECK(va == b.next_u64());
      CHECK(va != c.next_u64());
      CHECK(va != d.next_u64());
    }
  }

  TEST_CASE("substreams differ") {
    CounterRng a(7, "s", 1), b(7, "s", 2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
    CHECK(same == 0);
  }

  TEST_CASE("unit draws stay in range and look uniform") {
    CounterRng rng(3, "unit");
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
      const double u = rng.next_unit();
      REQUIRE(u >= 0.0);
      REQUIRE(u < 1.0);
      sum += u;
    }
    CHECK(std::fabs(sum / 20000 - 0.5) < 0.01);
  }

  TEST_CASE("normal draws have the right moments") {
    CounterRng rng(11, "normal");
    double sum = 0.0, sum2 = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
      const double z = rng.next_normal();
      sum += z;
      sum2 += z * z;
    }
    CHECK(std::fabs(sum / n) < 0.02);
    CHECK(std::fabs(sum2 / n - 1.0) < 0.03);
  }

  TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> v1(40), v2(40);
    for (int i = 0; i < 40; ++i) v1[i] = v2[i] = i;
    CounterRng a(5, "shuffle"), b(5, "shuffle");
    a.shuffle(v1);
    b.shuffle(v2);
    CHECK(v1 == v2);
    CHECK(std::set<int>(v1.begin(), v1.end()).size() == 40);
  }

  TEST_CASE("weighted pick respects zero-weight slots") {
    CounterRng rng(9, "weighted");
    // cumulative for weights {0, 2, 0, 1}
    std::vector<double> cum = {0.0, 2.0, 2.0, 3.0};
    for (int i = 0; i < 500; ++i) {
      const std::size_t pick = rng.next_weighted(cum);
      CHECK((pick == 1 || pick == 3));
    }
  }
}

TEST_SUITE("csv") {
  TEST_CASE("split_fields keeps empty fields") {
    std::vector<std::string_view> f;
    split_fields("a,,c", f);
    REQUIRE(f.size() == 3);
    CHECK(f[0] == "a");
    CHECK(f[1] == "");
    CHECK(f[2] == "c");
    split_fields("single", f);
    REQUIRE(f.size() == 1);
  }

  TEST_CASE("decimal formatting round-trips exactly") {
    CounterRng rng(1, "fmt");
    for (int i = 0; i < 2000; ++i) {
      const double x = (rng.next_unit() - 0.5) * std::pow(10.0, double(i % 60) - 30.0);
      const auto parsed = parse_f64(format_f64(x));
      REQUIRE(parsed.has_value());
      CHECK(*parsed == x);
    }
  }

  TEST_CASE("hex formatting round-trips bit-exactly") {
    CounterRng rng(2, "hex");
    for (int i = 0; i < 2000; ++i) {
      const double x = rng.next_normal() * std::pow(2.0, double(i % 120) - 60.0);
      const auto parsed = parse_f64_hex(format_f64_hex(x));
      REQUIRE(parsed.has_value());
      CHECK(*parsed == x);
    }
  }

  TEST_CASE("integer parsing rejects trailing garbage") {
    CHECK(parse_i64("123").value() == 123);
    CHECK(parse_i64("-5").value() == -5);
    CHECK_FALSE(parse_i64("12x").has_value());
    CHECK_FALSE(parse_i64("").has_value());
    CHECK_FALSE(parse_f64("1.2.3").has_value());
  }
}
