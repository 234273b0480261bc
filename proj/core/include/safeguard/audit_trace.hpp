#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/speaker.hpp"
#include "safeguard/time_util.hpp"

namespace safeguard {

struct ExchangeRecord {
  std::uint64_t log_position = 0;
  std::string conversation_id;
  std::string persona_id;
  std::string timestamp;  // RFC3339, canonical UTC
  Speaker speaker = Speaker::User;
  std::string text;

  friend bool operator==(const ExchangeRecord&, const ExchangeRecord&) = default;
};

struct FlagRecord {
  enum class Resolution { Open, Resolved };

  std::string flag_id;
  std::string conversation_id;
  std::uint64_t log_position = 0;
  std::string reason;
  std::string created_at;
  Resolution resolution = Resolution::Open;
  std::string decision;     // set once Resolved
  std::string resolved_at;  // set once Resolved

  friend bool operator==(const FlagRecord&, const FlagRecord&) = default;
};

struct RatingRecord {
  std::string rating_id;
  std::string conversation_id;
  std::uint64_t log_position = 0;
  int rating = 0;  // -1 or +1
  std::optional<std::string> suggestion;
  std::string created_at;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

void to_json(nlohmann::json& j, const ExchangeRecord& r);
void from_json(const nlohmann::json& j, ExchangeRecord& r);
void to_json(nlohmann::json& j, const FlagRecord& r);
void to_json(nlohmann::json& j, const RatingRecord& r);
void from_json(const nlohmann::json& j, RatingRecord& r);

struct TraceSelector {
  enum class Kind { Conversation, Persona };
  Kind kind = Kind::Conversation;
  std::string id;

  static TraceSelector conversation(std::string id) { return {Kind::Conversation, std::move(id)}; }
  static TraceSelector persona(std::string id) { return {Kind::Persona, std::move(id)}; }
};

/// Append-only store of conversational exchanges, user flags, ratings and
/// auxiliary event streams (gate reports, review decisions).
///
/// On disk, under `directory`:
///   exchanges-YYYY-MM-DD.jsonl   one ExchangeRecord per line, by UTC day
///   flags.jsonl                  flag and resolution events
///   ratings.jsonl                RatingRecord lines
///   events-<stream>.jsonl        free-form JSON events
///
/// Every write reaches the file (and fsync, unless disabled) before the call
/// returns. The in-memory index is rebuilt from the files on construction.
///
/// Appends to one conversation are serialized; appends to different
/// conversations may run concurrently. Readers see prefix-consistent
/// snapshots: position k of a conversation is never visible without 0..k-1.
///
/// Extension point: PII redaction before write (a `redaction_hook`) is not
/// implemented; records are stored verbatim.
class AuditTrace {
 public:
  struct Options {
    std::filesystem::path directory;
    bool fsync = true;
    Clock clock = system_now;
    /// Replay without repairing torn tails; every write throws StorageFailure.
    bool read_only = false;
  };

  /// Throws Error{StorageFailure} when the directory is unusable or a log
  /// line is corrupt.
  explicit AuditTrace(Options options);
  ~AuditTrace();

  AuditTrace(const AuditTrace&) = delete;
  AuditTrace& operator=(const AuditTrace&) = delete;

  /// Returns the new record's position: 0 for a new conversation, else
  /// previous max + 1. Throws Error{StorageFailure} (nothing is recorded and
  /// the position is not consumed) or Error{PersonaMismatch} when the
  /// conversation already belongs to another persona.
  std::uint64_t append_exchange(const std::string& conversation_id, const std::string& persona_id,
                                Speaker speaker, const std::string& text,
                                std::optional<Timestamp> timestamp = std::nullopt);

  /// Ordered by (conversation_id, log_position). Unknown ids give [].
  std::vector<ExchangeRecord> get_trace(const TraceSelector& selector) const;

  /// Every exchange, ordered by (conversation_id, log_position).
  std::vector<ExchangeRecord> all_exchanges() const;

  std::optional<ExchangeRecord> find_exchange(const std::string& conversation_id,
                                              std::uint64_t log_position) const;

  /// Throws Error{UnknownTarget}. Flags on the same target are not merged.
  FlagRecord flag_response(const std::string& conversation_id, std::uint64_t log_position,
                           const std::string& reason);

  /// Open -> Resolved, once. Throws Error{UnknownTarget, InvalidTransition}.
  FlagRecord resolve_flag(const std::string& flag_id, const std::string& decision);

  std::optional<FlagRecord> find_flag(const std::string& flag_id) const;
  std::vector<FlagRecord> flags() const;

  /// Throws Error{UnknownTarget, NotBotTurn, InvalidRating}.
  RatingRecord record_rating(const std::string& conversation_id, std::uint64_t log_position,
                             int rating, std::optional<std::string> suggestion = std::nullopt);

  /// Ratings whose created_at UTC day lies in `range` (all when nullopt).
  std::vector<RatingRecord> ratings(std::optional<DateRange> range = std::nullopt) const;

  /// Appends a JSON event to `events-<stream>.jsonl`. Stream names are
  /// [a-z0-9_]+. Throws Error{StorageFailure}.
  void append_event(const std::string& stream, const nlohmann::json& event);
  std::vector<nlohmann::json> events(const std::string& stream) const;

  const std::filesystem::path& directory() const noexcept { return options_.directory; }
  Timestamp now() const { return options_.clock(); }

 private:
  struct Conversation {
    std::string persona_id;
    std::vector<ExchangeRecord> records;
  };
  class FileSet;

  void replay();
  void replay_files();
  std::mutex& conversation_lock(const std::string& conversation_id);
  void write_line(const std::string& file_name, const std::string& line);

  Options options_;
  std::unique_ptr<FileSet> files_;

  mutable std::shared_mutex index_mu_;
  std::map<std::string, Conversation> conversations_;
  std::map<std::string, std::set<std::string>> persona_conversations_;
  std::map<std::string, FlagRecord> flags_;
  std::vector<RatingRecord> ratings_;
  std::map<std::string, std::vector<nlohmann::json>> events_;
  std::uint64_t next_flag_ = 1;
  std::uint64_t next_rating_ = 1;

  std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> conversation_locks_;
  std::mutex side_mu_;  // serializes flag/rating id allocation with their writes
};

}  // namespace safeguard
