#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/lexicon.hpp"
#include "safeguard/safety_score.hpp"
#include "safeguard/speaker.hpp"
#include "safeguard/time_util.hpp"

namespace safeguard {

struct ExchangeRecord;

/// One line of a corpus file.
struct CorpusRecord {
  std::string conversation_id;
  Timestamp timestamp;
  Speaker speaker = Speaker::User;
  std::string text;

  friend bool operator==(const CorpusRecord&, const CorpusRecord&) = default;
};

nlohmann::json corpus_record_to_json(const CorpusRecord& r);
CorpusRecord corpus_record_from_json(const nlohmann::json& j);

/// JSONL, blank lines skipped. Throws Error{ParseError} with the line number.
std::vector<CorpusRecord> parse_corpus(std::string_view jsonl);
std::vector<CorpusRecord> load_corpus_file(const std::filesystem::path& path);
std::string corpus_to_jsonl(std::span<const CorpusRecord> records);

std::vector<CorpusRecord> corpus_from_exchanges(std::span<const ExchangeRecord> exchanges);

enum class SpeakerFilter { Both, User, Bot };
std::string_view speaker_filter_name(SpeakerFilter f);
/// "both" | "user" | "bot"; throws Error{InvalidConfig}.
SpeakerFilter parse_speaker_filter(std::string_view s);

struct DailySafetyPoint {
  Date date;
  std::uint64_t total_words = 0;
  std::uint64_t matched_words = 0;
  double ratio = 0.0;
  CategoryCounts per_category{};
  std::uint64_t conversations_scored = 0;  // distinct conversations with >= 1 scored word
  std::optional<std::string> release_marker;

  friend bool operator==(const DailySafetyPoint&, const DailySafetyPoint&) = default;
};

using SafetySeries = std::vector<DailySafetyPoint>;

/// Daily pooled ratio by UTC day, ascending. Each exchange is scored on its
/// own and a day is the word-pooled merge of its exchanges. Days without any
/// scored word are left out. `range` limits the days considered.
SafetySeries build_timeseries(std::span<const CorpusRecord> records, const CompiledLexicon& lexicon,
                              SpeakerFilter speakers = SpeakerFilter::Both,
                              std::optional<DateRange> range = std::nullopt);

struct Release {
  Date date;
  std::string label;

  friend bool operator==(const Release&, const Release&) = default;
};

/// CSV `date,label`; optional `date,label` header, `#` comments.
/// Throws Error{MalformedLine} / Error{InvalidDate}.
std::vector<Release> parse_releases(std::string_view csv);
std::vector<Release> load_releases_file(const std::filesystem::path& path);

struct MarkResult {
  SafetySeries series;
  std::vector<std::string> warnings;
};

/// Sets release_marker on matching days. Several releases on one day are
/// joined with "; ". Dates without a point produce a warning.
MarkResult mark_releases(SafetySeries series, std::span<const Release> releases);

struct RegressionAlert {
  Date date;
  double ratio = 0.0;
  double baseline = 0.0;
  double factor = 0.0;  // +inf when the baseline matched nothing

  friend bool operator==(const RegressionAlert&, const RegressionAlert&) = default;
};

/// The baseline for day d pools the points dated in [d - window, d - 1].
/// Days closer than `window` to the first point, or whose window holds no
/// point, are skipped. Alerts when ratio > alert_factor * baseline.
/// Throws Error{InvalidWindow} for window < 1 or alert_factor <= 1.
std::vector<RegressionAlert> detect_regressions(const SafetySeries& series, int window = 7,
                                                double alert_factor = 1.5);

nlohmann::json alerts_to_json(std::span<const RegressionAlert> alerts);

/// Word-pooled ratio over the points dated in `range`; nullopt without words.
std::optional<double> pooled_ratio_between(const SafetySeries& series, DateRange range);

enum class ReportFormat { Csv, Json };
/// Throws Error{UnsupportedFormat}.
ReportFormat parse_report_format(std::string_view s);

inline constexpr std::string_view kReportCsvHeader =
    "date,total_words,matched_words,ratio,hate_speech,self_harm,sexual,violence,release_marker,"
    "conversations_scored";

std::string export_report(const SafetySeries& series, ReportFormat format);
/// Inverse of export_report. Throws Error{ParseError}.
SafetySeries parse_report(std::string_view text, ReportFormat format);

nlohmann::json point_to_json(const DailySafetyPoint& p);
DailySafetyPoint point_from_json(const nlohmann::json& j);

/// Shortest decimal that reads back as the same double.
std::string format_double(double v);

}  // namespace safeguard
