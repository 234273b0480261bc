#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <string_view>

namespace safeguard {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Date = std::chrono::year_month_day;
using Clock = std::function<Timestamp()>;

Timestamp system_now();

/// Accepts `YYYY-MM-DDTHH:MM:SS[.fff...](Z|+HH:MM|-HH:MM)`; 't'/'z' and a
/// space separator are tolerated. Throws Error{InvalidDate}.
Timestamp parse_rfc3339(std::string_view text);

/// Canonical UTC form: `YYYY-MM-DDTHH:MM:SSZ`, or `...SS.mmmZ` when the
/// millisecond part is non-zero.
std::string format_rfc3339(Timestamp t);

/// `YYYY-MM-DD`. Throws Error{InvalidDate}.
Date parse_date(std::string_view text);
std::string format_date(Date d);

/// UTC calendar day of a timestamp.
Date utc_day(Timestamp t);

inline Date add_days(Date d, int days) {
  return Date{std::chrono::sys_days{d} + std::chrono::days{days}};
}

inline int days_between(Date from, Date to) {
  return static_cast<int>((std::chrono::sys_days{to} - std::chrono::sys_days{from}).count());
}

struct DateRange {
  Date from;
  Date to;  // inclusive

  bool contains(Date d) const { return d >= from && d <= to; }
};

}  // namespace safeguard
