#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace cardecon {

/// Local civil date-time at minute precision. No time zone: the night and
/// weekend windows are local-clock notions.
struct CivilDateTime {
  std::int16_t year = 1970;
  std::uint8_t month = 1;  // 1..12
  std::uint8_t day = 1;    // 1..31
  std::uint8_t hour = 0;   // 0..23
  std::uint8_t minute = 0;

  friend bool operator==(const CivilDateTime&, const CivilDateTime&) = default;
};

inline bool is_leap_year(int y) {
  return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
}

inline int days_in_month(int y, int m) {
  static constexpr std::array<int, 12> kDays = {31, 28, 31, 30, 31, 30,
                                                31, 31, 30, 31, 30, 31};
  if (m == 2 && is_leap_year(y)) return 29;
  return kDays[m - 1];
}

inline bool is_valid_civil(const CivilDateTime& t) {
  return t.month >= 1 && t.month <= 12 && t.day >= 1 &&
         t.day <= days_in_month(t.year, t.month) && t.hour <= 23 && t.minute <= 59;
}

/// Days since 1970-01-01 (Howard Hinnant's civil-days algorithm).
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

/// 0 = Sunday .. 6 = Saturday.
inline int weekday_of(const CivilDateTime& t) {
  const std::int64_t d = days_from_civil(t.year, t.month, t.day);
  return static_cast<int>(((d % 7) + 11) % 7);
}

struct TemporalClass {
  bool nighttime = false;
  bool weekend = false;
};

/// Night window is half-open [22:00, 06:00) so every minute belongs to
/// exactly one class; weekend is Saturday and Sunday.
inline TemporalClass classify_temporal(const CivilDateTime& t) {
  TemporalClass out;
  out.nighttime = t.hour >= 22 || t.hour < 6;
  const int wd = weekday_of(t);
  out.weekend = wd == 0 || wd == 6;
  return out;
}

/// Parses "YYYY-MM-DDTHH:MM"; rejects anything malformed or out of range.
inline std::optional<CivilDateTime> parse_civil(std::string_view s) {
  if (s.size() != 16) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':') return std::nullopt;
  auto digits = [&](std::size_t pos, std::size_t n, int& out) {
    out = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
      out = out * 10 + (s[i] - '0');
    }
    return true;
  };
  int y, mo, d, h, mi;
  if (!digits(0, 4, y) || !digits(5, 2, mo) || !digits(8, 2, d) || !digits(11, 2, h) ||
      !digits(14, 2, mi))
    return std::nullopt;
  CivilDateTime t{static_cast<std::int16_t>(y), static_cast<std::uint8_t>(mo),
                  static_cast<std::uint8_t>(d), static_cast<std::uint8_t>(h),
                  static_cast<std::uint8_t>(mi)};
  if (!is_valid_civil(t)) return std::nullopt;
  return t;
}

inline std::string format_civil(const CivilDateTime& t) {
  char buf[17];
  auto put2 = [&](int pos, int v) {
    buf[pos] = static_cast<char>('0' + v / 10);
    buf[pos + 1] = static_cast<char>('0' + v % 10);
  };
  const int y = t.year;
  buf[0] = static_cast<char>('0' + (y / 1000) % 10);
  buf[1] = static_cast<char>('0' + (y / 100) % 10);
  buf[2] = static_cast<char>('0' + (y / 10) % 10);
  buf[3] = static_cast<char>('0' + y % 10);
  buf[4] = '-';
  put2(5, t.month);
  buf[7] = '-';
  put2(8, t.day);
  buf[10] = 'T';
  put2(11, t.hour);
  buf[13] = ':';
  put2(14, t.minute);
  return std::string(buf, 16);
}

}  // namespace cardecon
