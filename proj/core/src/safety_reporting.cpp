#include "safeguard/safety_reporting.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "safeguard/audit_trace.hpp"
#include "safeguard/error.hpp"

namespace safeguard {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    f(line_no, line);
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::string csv_field(std::string_view s) {
  const bool quote = s.find_first_of(",\"\r\n") != std::string_view::npos ||
                     (!s.empty() && (s.front() == ' ' || s.back() == ' '));
  if (!quote) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// RFC 4180 records; quoted fields may span lines. Records that are entirely
// empty are dropped.
std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  const auto end_row = [&] {
    if (field_started || !row.empty()) {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
    }
    row.clear();
    field.clear();
    field_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted field");
  end_row();
  return rows;
}

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw Error(ErrorCode::ParseError, "bad " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

double parse_f64(std::string_view s, std::string_view what) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw Error(ErrorCode::ParseError, "bad " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

// ---- corpus ----

json corpus_record_to_json(const CorpusRecord& r) {
  return {{"conversation_id", r.conversation_id},
          {"timestamp", format_rfc3339(r.timestamp)},
          {"speaker", speaker_name(r.speaker)},
          {"text", r.text}};
}

CorpusRecord corpus_record_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "corpus record must be an object");
  CorpusRecord r;
  try {
    r.conversation_id = j.at("conversation_id").get<std::string>();
    r.timestamp = parse_rfc3339(j.at("timestamp").get<std::string>());
    const auto sp = parse_speaker(j.at("speaker").get<std::string>());
    if (!sp) throw Error(ErrorCode::ParseError, "speaker must be user or bot");
    r.speaker = *sp;
    r.text = j.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (r.conversation_id.empty()) throw Error(ErrorCode::ParseError, "empty conversation_id");
  return r;
}

std::vector<CorpusRecord> parse_corpus(std::string_view jsonl) {
  std::vector<CorpusRecord> out;
  for_each_line(jsonl, [&](std::size_t n, std::string_view line) {
    if (trim(line).empty()) return;
    try {
      out.push_back(corpus_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(n) + ": " + e.detail());
    }
  });
  return out;
}

std::vector<CorpusRecord> load_corpus_file(const std::filesystem::path& path) {
  return parse_corpus(read_file(path));
}

std::string corpus_to_jsonl(std::span<const CorpusRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += corpus_record_to_json(r).dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<CorpusRecord> corpus_from_exchanges(std::span<const ExchangeRecord> exchanges) {
  std::vector<CorpusRecord> out;
  out.reserve(exchanges.size());
  for (const auto& e : exchanges) {
    out.push_back({e.conversation_id, parse_rfc3339(e.timestamp), e.speaker, e.text});
  }
  return out;
}

std::string_view speaker_filter_name(SpeakerFilter f) {
  switch (f) {
    case SpeakerFilter::Both: return "both";
    case SpeakerFilter::User: return "user";
    case SpeakerFilter::Bot: return "bot";
  }
  return "both";
}

SpeakerFilter parse_speaker_filter(std::string_view s) {
  if (s == "both") return SpeakerFilter::Both;
  if (s == "user") return SpeakerFilter::User;
  if (s == "bot") return SpeakerFilter::Bot;
  throw Error(ErrorCode::InvalidConfig, "speaker filter must be both, user or bot: " + std::string(s));
}

// ---- series ----

SafetySeries build_timeseries(std::span<const CorpusRecord> records, const CompiledLexicon& lexicon,
                              SpeakerFilter speakers, std::optional<DateRange> range) {
  struct Day {
    std::vector<SafetyScore> scores;
    std::set<std::string_view> conversations;
  };
  std::map<std::chrono::sys_days, Day> days;

  for (const auto& r : records) {
    if (speakers == SpeakerFilter::User && r.speaker != Speaker::User) continue;
    if (speakers == SpeakerFilter::Bot && r.speaker != Speaker::Bot) continue;
    const Date d = utc_day(r.timestamp);
    if (range && !range->contains(d)) continue;
    const TokenStream tokens = tokenize(r.text);
    if (tokens.empty()) continue;
    auto& day = days[std::chrono::sys_days{d}];
    day.scores.push_back(safety_score(tokens, lexicon));
    day.conversations.insert(r.conversation_id);
  }

  SafetySeries series;
  series.reserve(days.size());
  for (const auto& [sd, day] : days) {
    const SafetyScore merged = merge_scores(day.scores);
    DailySafetyPoint p;
    p.date = Date{sd};
    p.total_words = merged.total_words;
    p.matched_words = merged.matched_words;
    p.ratio = merged.ratio;
    p.per_category = merged.per_category;
    p.conversations_scored = day.conversations.size();
    series.push_back(std::move(p));
  }
  return series;
}

std::vector<Release> parse_releases(std::string_view csv) {
  std::vector<Release> out;
  for_each_line(csv, [&](std::size_t n, std::string_view line) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') return;
    const auto comma = t.find(',');
    if (comma == std::string_view::npos) {
      throw Error(ErrorCode::MalformedLine, "line " + std::to_string(n) + ": expected date,label");
    }
    const auto date = trim(t.substr(0, comma));
    const auto label = trim(t.substr(comma + 1));
    if (date == "date" && label == "label") return;
    if (label.empty()) {
      throw Error(ErrorCode::MalformedLine, "line " + std::to_string(n) + ": empty label");
    }
    try {
      out.push_back({parse_date(date), std::string(label)});
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidDate, "line " + std::to_string(n) + ": " + e.detail());
    }
  });
  return out;
}

std::vector<Release> load_releases_file(const std::filesystem::path& path) {
  return parse_releases(read_file(path));
}

MarkResult mark_releases(SafetySeries series, std::span<const Release> releases) {
  MarkResult out;
  for (const auto& r : releases) {
    auto it = std::lower_bound(series.begin(), series.end(), r.date,
                               [](const DailySafetyPoint& p, Date d) { return p.date < d; });
    if (it == series.end() || it->date != r.date) {
      out.warnings.push_back("release '" + r.label + "' on " + format_date(r.date) +
                             " has no data point");
      continue;
    }
    if (it->release_marker) {
      *it->release_marker += "; " + r.label;
    } else {
      it->release_marker = r.label;
    }
  }
  out.series = std::move(series);
  return out;
}

std::optional<double> pooled_ratio_between(const SafetySeries& series, DateRange range) {
  std::uint64_t total = 0;
  std::uint64_t matched = 0;
  for (const auto& p : series) {
    if (!range.contains(p.date)) continue;
    total += p.total_words;
    matched += p.matched_words;
  }
  if (total == 0) return std::nullopt;
  return pooled_ratio(matched, total);
}

std::vector<RegressionAlert> detect_regressions(const SafetySeries& series, int window,
                                                double alert_factor) {
  if (window < 1) throw Error(ErrorCode::InvalidWindow, "window must be >= 1");
  if (!(alert_factor > 1.0)) throw Error(ErrorCode::InvalidWindow, "alert factor must be > 1");
  std::vector<RegressionAlert> alerts;
  if (series.empty()) return alerts;

  const Date first = series.front().date;
  std::size_t lo = 0;  // first point inside the current window
  std::uint64_t total = 0;
  std::uint64_t matched = 0;
  std::size_t hi = 0;  // one past the last point added to the window
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Date d = series[i].date;
    const Date from = add_days(d, -window);
    while (hi < i) {
      total += series[hi].total_words;
      matched += series[hi].matched_words;
      ++hi;
    }
    while (lo < hi && series[lo].date < from) {
      total -= series[lo].total_words;
      matched -= series[lo].matched_words;
      ++lo;
    }
    if (from < first || total == 0) continue;
    const double baseline = pooled_ratio(matched, total);
    if (series[i].ratio > alert_factor * baseline) {
      const double factor = baseline > 0 ? series[i].ratio / baseline
                                         : std::numeric_limits<double>::infinity();
      alerts.push_back({d, series[i].ratio, baseline, factor});
    }
  }
  return alerts;
}

json alerts_to_json(std::span<const RegressionAlert> alerts) {
  json out = json::array();
  for (const auto& a : alerts) {
    out.push_back({{"date", format_date(a.date)},
                   {"ratio", a.ratio},
                   {"baseline", a.baseline},
                   {"factor", std::isfinite(a.factor) ? json(a.factor) : json(nullptr)}});
  }
  return out;
}

// ---- export ----

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw Error(ErrorCode::UnsupportedFormat, "format must be csv or json: " + std::string(s));
}

json point_to_json(const DailySafetyPoint& p) {
  return {{"date", format_date(p.date)},
          {"total_words", p.total_words},
          {"matched_words", p.matched_words},
          {"ratio", p.ratio},
          {"per_category", category_counts_to_json(p.per_category)},
          {"conversations_scored", p.conversations_scored},
          {"release_marker", p.release_marker ? json(*p.release_marker) : json(nullptr)}};
}

DailySafetyPoint point_from_json(const json& j) {
  try {
    DailySafetyPoint p;
    p.date = parse_date(j.at("date").get<std::string>());
    p.total_words = j.at("total_words").get<std::uint64_t>();
    p.matched_words = j.at("matched_words").get<std::uint64_t>();
    p.ratio = j.at("ratio").get<double>();
    p.per_category = category_counts_from_json(j.at("per_category"));
    p.conversations_scored = j.value("conversations_scored", std::uint64_t{0});
    if (j.contains("release_marker") && !j["release_marker"].is_null()) {
      p.release_marker = j["release_marker"].get<std::string>();
    }
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

std::string export_report(const SafetySeries& series, ReportFormat format) {
  if (format == ReportFormat::Json) {
    json points = json::array();
    for (const auto& p : series) points.push_back(point_to_json(p));
    return json{{"series", std::move(points)}}.dump(2, ' ', false, json::error_handler_t::replace) +
           "\n";
  }
  std::string out(kReportCsvHeader);
  out += '\n';
  for (const auto& p : series) {
    out += format_date(p.date);
    out += ',' + std::to_string(p.total_words);
    out += ',' + std::to_string(p.matched_words);
    out += ',' + format_double(p.ratio);
    for (auto c : p.per_category) out += ',' + std::to_string(c);
    out += ',' + (p.release_marker ? csv_field(*p.release_marker) : std::string());
    out += ',' + std::to_string(p.conversations_scored);
    out += '\n';
  }
  return out;
}

SafetySeries parse_report(std::string_view text, ReportFormat format) {
  SafetySeries series;
  if (format == ReportFormat::Json) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, e.what());
    }
    if (!j.is_object() || !j.contains("series") || !j["series"].is_array()) {
      throw Error(ErrorCode::ParseError, "expected {\"series\": [...]}");
    }
    for (const auto& p : j["series"]) series.push_back(point_from_json(p));
    return series;
  }

  const auto rows = parse_csv(text);
  if (rows.empty()) throw Error(ErrorCode::ParseError, "missing header");
  std::string header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) header += (i ? "," : "") + rows[0][i];
  // The trailing conversations_scored column is optional on input.
  const std::string_view base = kReportCsvHeader.substr(0, kReportCsvHeader.rfind(','));
  const bool has_conversations = header == kReportCsvHeader;
  if (!has_conversations && header != base) {
    throw Error(ErrorCode::ParseError, "unexpected header: " + header);
  }
  const std::size_t columns = has_conversations ? 10 : 9;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() != columns) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(r) + ": expected " +
                                             std::to_string(columns) + " fields");
    }
    DailySafetyPoint p;
    try {
      p.date = parse_date(f[0]);
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(r) + ": " + e.detail());
    }
    p.total_words = parse_u64(f[1], "total_words");
    p.matched_words = parse_u64(f[2], "matched_words");
    p.ratio = parse_f64(f[3], "ratio");
    for (std::size_t c = 0; c < kCategoryCount; ++c) p.per_category[c] = parse_u64(f[4 + c], "count");
    if (!f[8].empty()) p.release_marker = f[8];
    if (has_conversations) p.conversations_scored = parse_u64(f[9], "conversations_scored");
    series.push_back(std::move(p));
  }
  return series;
}

}  // namespace safeguard
