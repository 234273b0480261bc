#include "safeguard/time_util.hpp"

#include <cstdio>

#include "safeguard/error.hpp"

namespace safeguard {
namespace {

using namespace std::chrono;

bool read_digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

[[noreturn]] void bad(std::string_view what, std::string_view text) {
  throw Error(ErrorCode::InvalidDate, std::string(what) + ": '" + std::string(text) + "'");
}

Date checked_date(int y, int m, int d, std::string_view text) {
  const Date date{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (!date.ok()) bad("not a calendar date", text);
  return date;
}

}  // namespace

Timestamp system_now() { return floor<milliseconds>(system_clock::now()); }

Date parse_date(std::string_view text) {
  int y = 0, m = 0, d = 0;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-' || !read_digits(text, 0, 4, y) ||
      !read_digits(text, 5, 2, m) || !read_digits(text, 8, 2, d)) {
    bad("expected YYYY-MM-DD", text);
  }
  return checked_date(y, m, d, text);
}

std::string format_date(Date d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

Timestamp parse_rfc3339(std::string_view text) {
  if (text.size() < 20) bad("timestamp too short", text);
  const Date date = parse_date(text.substr(0, 10));
  const char sep = text[10];
  if (sep != 'T' && sep != 't' && sep != ' ') bad("expected 'T' separator", text);

  int hh = 0, mm = 0, ss = 0;
  if (!read_digits(text, 11, 2, hh) || text[13] != ':' || !read_digits(text, 14, 2, mm) ||
      text[16] != ':' || !read_digits(text, 17, 2, ss)) {
    bad("expected HH:MM:SS", text);
  }
  // Leap seconds (60) are not representable in sys_time.
  if (hh > 23 || mm > 59 || ss > 59) bad("time out of range", text);

  std::size_t pos = 19;
  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    int scale = 100;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      millis += (text[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == start) bad("empty fraction", text);
  }

  minutes offset{0};
  if (pos >= text.size()) bad("missing UTC offset", text);
  if (text[pos] == 'Z' || text[pos] == 'z') {
    ++pos;
  } else if (text[pos] == '+' || text[pos] == '-') {
    int oh = 0, om = 0;
    if (!read_digits(text, pos + 1, 2, oh) || pos + 3 >= text.size() || text[pos + 3] != ':' ||
        !read_digits(text, pos + 4, 2, om) || oh > 23 || om > 59) {
      bad("bad UTC offset", text);
    }
    offset = hours{oh} + minutes{om};
    if (text[pos] == '-') offset = -offset;
    pos += 6;
  } else {
    bad("bad UTC offset", text);
  }
  if (pos != text.size()) bad("trailing characters", text);

  const auto local = sys_days{date} + hours{hh} + minutes{mm} + seconds{ss} + milliseconds{millis};
  return Timestamp{local - offset};
}

std::string format_rfc3339(Timestamp t) {
  const auto day_start = floor<days>(t);
  const Date d{day_start};
  const hh_mm_ss tod{t - day_start};
  char buf[40];
  const auto ms = static_cast<int>(tod.subseconds().count());
  if (ms == 0) {
    std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_date(d).c_str(),
                  static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                  static_cast<int>(tod.seconds().count()));
  } else {
    std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02d.%03dZ", format_date(d).c_str(),
                  static_cast<int>(tod.hours().count()), static_cast<int>(tod.minutes().count()),
                  static_cast<int>(tod.seconds().count()), ms);
  }
  return buf;
}

Date utc_day(Timestamp t) { return Date{floor<days>(t)}; }

}  // namespace safeguard
