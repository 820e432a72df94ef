#include "doctest.h"

#include "cardecon/temporal.hpp"

using namespace cardecon;

TEST_SUITE("temporal") {
  TEST_CASE("night and weekend classification") {
    // 2011-01-11 is a Tuesday
    auto tc = classify_temporal({2011, 1, 11, 23, 0});
    CHECK(tc.nighttime);
    CHECK_FALSE(tc.weekend);

    // 06:00 on a Saturday: the night window is half-open, so not night
    tc = classify_temporal({2011, 1, 15, 6, 0});
    CHECK_FALSE(tc.nighttime);
    CHECK(tc.weekend);

    // noon on a Monday
    tc = classify_temporal({2011, 1, 10, 12, 0});
    CHECK_FALSE(tc.nighttime);
    CHECK_FALSE(tc.weekend);
  }

  TEST_CASE("window boundaries") {
    CHECK(classify_temporal({2011, 3, 2, 22, 0}).nighttime);
    CHECK(classify_temporal({2011, 3, 2, 21, 59}).nighttime == false);
    CHECK(classify_temporal({2011, 3, 2, 5, 59}).nighttime);
    CHECK(classify_temporal({2011, 3, 2, 0, 0}).nighttime);
    // every minute belongs to exactly one class: night hours count 8 of 24
    int night_hours = 0;
    for (int h = 0; h < 24; ++h)
      night_hours += classify_temporal({2011, 3, 2, static_cast<std::uint8_t>(h), 30}).nighttime;
    CHECK(night_hours == 8);
  }

  TEST_CASE("weekday computation across year boundaries") {
    CHECK(weekday_of({2011, 1, 1, 0, 0}) == 6);   // Saturday
    CHECK(weekday_of({2011, 12, 31, 0, 0}) == 6); // Saturday
    CHECK(weekday_of({2012, 2, 29, 0, 0}) == 3);  // leap Wednesday
    CHECK(weekday_of({1970, 1, 1, 0, 0}) == 4);   // epoch Thursday
  }

  TEST_CASE("parse accepts the documented format only") {
    auto t = parse_civil("2011-07-04T02:30");
    REQUIRE(t.has_value());
    CHECK(t->year == 2011);
    CHECK(t->month == 7);
    CHECK(t->day == 4);
    CHECK(t->hour == 2);
    CHECK(t->minute == 30);
    CHECK(format_civil(*t) == "2011-07-04T02:30");

    CHECK_FALSE(parse_civil("2011-07-04 02:30").has_value());
    CHECK_FALSE(parse_civil("2011-13-04T02:30").has_value());
    CHECK_FALSE(parse_civil("2011-02-29T02:30").has_value());  // 2011 is not a leap year
    CHECK(parse_civil("2012-02-29T02:30").has_value());
    CHECK_FALSE(parse_civil("2011-07-04T24:00").has_value());
    CHECK_FALSE(parse_civil("2011-07-04T02:60").has_value());
    CHECK_FALSE(parse_civil("2011-07-4T02:30").has_value());
    CHECK_FALSE(parse_civil("garbage").has_value());
  }

  TEST_CASE("format/parse round trip") {
    for (int m = 1; m <= 12; ++m) {
      CivilDateTime t{2011, static_cast<std::uint8_t>(m), 28, 9, 5};
      const auto back = parse_civil(format_civil(t));
      REQUIRE(back.has_value());
      CHECK(*back == t);
    }
  }
}
