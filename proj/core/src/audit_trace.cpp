#include "safeguard/audit_trace.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "safeguard/error.hpp"

namespace safeguard {

using nlohmann::json;

void to_json(json& j, const ExchangeRecord& r) {
  j = json{{"log_position", r.log_position}, {"conversation_id", r.conversation_id},
           {"persona_id", r.persona_id},     {"timestamp", r.timestamp},
           {"speaker", speaker_name(r.speaker)}, {"text", r.text}};
}

void from_json(const json& j, ExchangeRecord& r) {
  r.log_position = j.at("log_position").get<std::uint64_t>();
  r.conversation_id = j.at("conversation_id").get<std::string>();
  r.persona_id = j.at("persona_id").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  const auto speaker = parse_speaker(j.at("speaker").get<std::string>());
  if (!speaker) throw Error(ErrorCode::ParseError, "speaker must be 'user' or 'bot'");
  r.speaker = *speaker;
  r.text = j.at("text").get<std::string>();
}

void to_json(json& j, const FlagRecord& r) {
  j = json{{"flag_id", r.flag_id},
           {"conversation_id", r.conversation_id},
           {"log_position", r.log_position},
           {"reason", r.reason},
           {"created_at", r.created_at},
           {"resolution", r.resolution == FlagRecord::Resolution::Open ? "open" : "resolved"}};
  if (r.resolution == FlagRecord::Resolution::Resolved) {
    j["decision"] = r.decision;
    j["resolved_at"] = r.resolved_at;
  }
}

void to_json(json& j, const RatingRecord& r) {
  j = json{{"rating_id", r.rating_id},         {"conversation_id", r.conversation_id},
           {"log_position", r.log_position},   {"rating", r.rating},
           {"suggestion", r.suggestion ? json(*r.suggestion) : json(nullptr)},
           {"created_at", r.created_at}};
}

void from_json(const json& j, RatingRecord& r) {
  r.rating_id = j.at("rating_id").get<std::string>();
  r.conversation_id = j.at("conversation_id").get<std::string>();
  r.log_position = j.at("log_position").get<std::uint64_t>();
  r.rating = j.at("rating").get<int>();
  if (j.contains("suggestion") && !j.at("suggestion").is_null()) {
    r.suggestion = j.at("suggestion").get<std::string>();
  } else {
    r.suggestion.reset();
  }
  r.created_at = j.at("created_at").get<std::string>();
}

namespace {

constexpr const char* kFlagsFile = "flags.jsonl";
constexpr const char* kRatingsFile = "ratings.jsonl";

std::string exchange_file(Date day) { return "exchanges-" + format_date(day) + ".jsonl"; }

std::string padded_id(const char* prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%08llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

std::string dump_line(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

bool valid_stream_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

// Reads complete lines. A torn final line (no newline, unparsable) is cut
// off the file; any other unparsable line is corruption.
std::vector<json> read_jsonl(const std::filesystem::path& path, bool repair) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();

  std::vector<json> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    ++line_no;
    if (nl == std::string::npos) {
      try {
        out.push_back(json::parse(content.substr(pos)));
        // Complete record without its newline: finish the line.
        if (repair) std::ofstream(path, std::ios::binary | std::ios::app) << '\n';
      } catch (const json::parse_error&) {
        if (repair) std::filesystem::resize_file(path, pos);
      }
      break;
    }
    const std::string_view line(content.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::StorageFailure,
                  path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

class AuditTrace::FileSet {
 public:
  FileSet(std::filesystem::path dir, bool fsync) : dir_(std::move(dir)), fsync_(fsync) {}

  ~FileSet() {
    for (auto& [name, fd] : fds_) ::close(fd);
  }

  void append(const std::string& name, const std::string& line) {
    std::lock_guard lock(mu_);
    int fd = open_locked(name);

    struct stat st {};
    const off_t before = (::fstat(fd, &st) == 0) ? st.st_size : -1;

    std::size_t written = 0;
    while (written < line.size()) {
      const ssize_t n = ::write(fd, line.data() + written, line.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(name, fd, before, errno);
      }
      written += static_cast<std::size_t>(n);
    }
    if (fsync_ && ::fsync(fd) != 0) fail(name, fd, before, errno);
  }

 private:
  int open_locked(const std::string& name) {
    if (auto it = fds_.find(name); it != fds_.end()) return it->second;
    const auto path = dir_ / name;
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0600);
    if (fd < 0) {
      throw Error(ErrorCode::StorageFailure,
                  "open " + path.string() + ": " + std::strerror(errno));
    }
    fds_.emplace(name, fd);
    return fd;
  }

  [[noreturn]] void fail(const std::string& name, int fd, off_t before, int err) {
    // Drop any partial line so the file stays a sequence of whole records.
    if (before >= 0) {
      [[maybe_unused]] const int rc = ::ftruncate(fd, before);
    }
    ::close(fd);
    fds_.erase(name);
    throw Error(ErrorCode::StorageFailure, "write " + name + ": " + std::strerror(err));
  }

  std::filesystem::path dir_;
  bool fsync_;
  std::mutex mu_;
  std::map<std::string, int> fds_;
};

AuditTrace::AuditTrace(Options options) : options_(std::move(options)) {
  std::error_code ec;
  if (!options_.read_only) std::filesystem::create_directories(options_.directory, ec);
  if (!std::filesystem::is_directory(options_.directory)) {
    throw Error(ErrorCode::StorageFailure,
                "log directory unavailable: " + options_.directory.string());
  }
  files_ = std::make_unique<FileSet>(options_.directory, options_.fsync);
  replay();
}

AuditTrace::~AuditTrace() = default;

void AuditTrace::replay() {
  try {
    replay_files();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::StorageFailure, std::string("corrupt audit log: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw Error(ErrorCode::StorageFailure, std::string("corrupt audit log: ") + e.what());
  }
}

void AuditTrace::replay_files() {
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(options_.directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());

  for (const auto& path : paths) {
    const std::string name = path.filename().string();
    if (name.rfind("exchanges-", 0) == 0) {
      for (const auto& j : read_jsonl(path, !options_.read_only)) {
        auto rec = j.get<ExchangeRecord>();
        auto& conv = conversations_[rec.conversation_id];
        conv.persona_id = rec.persona_id;
        persona_conversations_[rec.persona_id].insert(rec.conversation_id);
        conv.records.push_back(std::move(rec));
      }
    } else if (name == kFlagsFile) {
      for (const auto& j : read_jsonl(path, !options_.read_only)) {
        if (j.at("event") == "flag") {
          FlagRecord f;
          f.flag_id = j.at("flag_id").get<std::string>();
          f.conversation_id = j.at("conversation_id").get<std::string>();
          f.log_position = j.at("log_position").get<std::uint64_t>();
          f.reason = j.at("reason").get<std::string>();
          f.created_at = j.at("created_at").get<std::string>();
          flags_[f.flag_id] = f;
          ++next_flag_;
        } else if (j.at("event") == "resolve") {
          auto& f = flags_.at(j.at("flag_id").get<std::string>());
          f.resolution = FlagRecord::Resolution::Resolved;
          f.decision = j.at("decision").get<std::string>();
          f.resolved_at = j.at("resolved_at").get<std::string>();
        }
      }
    } else if (name == kRatingsFile) {
      for (const auto& j : read_jsonl(path, !options_.read_only)) {
        ratings_.push_back(j.get<RatingRecord>());
        ++next_rating_;
      }
    } else if (name.rfind("events-", 0) == 0) {
      const std::string stream = name.substr(7, name.size() - 7 - 6);
      events_[stream] = read_jsonl(path, !options_.read_only);
    }
  }

  // A conversation may span several day segments; restore position order and
  // verify the sequence is gapless.
  for (auto& [id, conv] : conversations_) {
    std::sort(conv.records.begin(), conv.records.end(),
              [](const auto& a, const auto& b) { return a.log_position < b.log_position; });
    for (std::size_t i = 0; i < conv.records.size(); ++i) {
      if (conv.records[i].log_position != i) {
        throw Error(ErrorCode::StorageFailure,
                    "conversation " + id + " has a gap or duplicate at position " +
                        std::to_string(i));
      }
    }
  }
}

std::mutex& AuditTrace::conversation_lock(const std::string& conversation_id) {
  std::lock_guard lock(locks_mu_);
  auto& slot = conversation_locks_[conversation_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

void AuditTrace::write_line(const std::string& file_name, const std::string& line) {
  if (options_.read_only) throw Error(ErrorCode::StorageFailure, "audit trace opened read-only");
  files_->append(file_name, line);
}

std::uint64_t AuditTrace::append_exchange(const std::string& conversation_id,
                                          const std::string& persona_id, Speaker speaker,
                                          const std::string& text,
                                          std::optional<Timestamp> timestamp) {
  if (conversation_id.empty()) throw Error(ErrorCode::StorageFailure, "empty conversation_id");

  std::lock_guard conv_lock(conversation_lock(conversation_id));

  ExchangeRecord rec;
  {
    std::shared_lock lock(index_mu_);
    if (auto it = conversations_.find(conversation_id); it != conversations_.end()) {
      if (it->second.persona_id != persona_id) {
        throw Error(ErrorCode::PersonaMismatch, "conversation " + conversation_id +
                                                    " belongs to persona " +
                                                    it->second.persona_id);
      }
      rec.log_position = it->second.records.size();
    }
  }
  const Timestamp ts = timestamp.value_or(options_.clock());
  rec.conversation_id = conversation_id;
  rec.persona_id = persona_id;
  rec.timestamp = format_rfc3339(ts);
  rec.speaker = speaker;
  rec.text = text;

  write_line(exchange_file(utc_day(ts)), dump_line(json(rec)));

  std::unique_lock lock(index_mu_);
  auto& conv = conversations_[conversation_id];
  conv.persona_id = persona_id;
  conv.records.push_back(std::move(rec));
  persona_conversations_[persona_id].insert(conversation_id);
  return conv.records.size() - 1;
}

std::vector<ExchangeRecord> AuditTrace::get_trace(const TraceSelector& selector) const {
  std::shared_lock lock(index_mu_);
  std::vector<ExchangeRecord> out;
  if (selector.kind == TraceSelector::Kind::Conversation) {
    if (auto it = conversations_.find(selector.id); it != conversations_.end()) {
      out = it->second.records;
    }
    return out;
  }
  if (auto it = persona_conversations_.find(selector.id); it != persona_conversations_.end()) {
    for (const auto& conv_id : it->second) {  // std::set keeps conversation order
      const auto& recs = conversations_.at(conv_id).records;
      out.insert(out.end(), recs.begin(), recs.end());
    }
  }
  return out;
}

std::vector<ExchangeRecord> AuditTrace::all_exchanges() const {
  std::shared_lock lock(index_mu_);
  std::vector<ExchangeRecord> out;
  for (const auto& [id, conv] : conversations_) {
    out.insert(out.end(), conv.records.begin(), conv.records.end());
  }
  return out;
}

std::optional<ExchangeRecord> AuditTrace::find_exchange(const std::string& conversation_id,
                                                        std::uint64_t log_position) const {
  std::shared_lock lock(index_mu_);
  const auto it = conversations_.find(conversation_id);
  if (it == conversations_.end() || log_position >= it->second.records.size()) return std::nullopt;
  return it->second.records[log_position];
}

FlagRecord AuditTrace::flag_response(const std::string& conversation_id,
                                     std::uint64_t log_position, const std::string& reason) {
  if (!find_exchange(conversation_id, log_position)) {
    throw Error(ErrorCode::UnknownTarget,
                conversation_id + "#" + std::to_string(log_position) + " does not exist");
  }
  std::lock_guard side(side_mu_);
  FlagRecord f;
  {
    std::shared_lock lock(index_mu_);
    f.flag_id = padded_id("flag", next_flag_);
  }
  f.conversation_id = conversation_id;
  f.log_position = log_position;
  f.reason = reason;
  f.created_at = format_rfc3339(options_.clock());

  json event = f;
  event["event"] = "flag";
  event.erase("resolution");
  write_line(kFlagsFile, dump_line(event));

  std::unique_lock lock(index_mu_);
  flags_[f.flag_id] = f;
  ++next_flag_;
  return f;
}

FlagRecord AuditTrace::resolve_flag(const std::string& flag_id, const std::string& decision) {
  std::lock_guard side(side_mu_);
  FlagRecord f;
  {
    std::shared_lock lock(index_mu_);
    const auto it = flags_.find(flag_id);
    if (it == flags_.end()) throw Error(ErrorCode::UnknownTarget, "no flag " + flag_id);
    if (it->second.resolution != FlagRecord::Resolution::Open) {
      throw Error(ErrorCode::InvalidTransition, flag_id + " is already resolved");
    }
    f = it->second;
  }
  f.resolution = FlagRecord::Resolution::Resolved;
  f.decision = decision;
  f.resolved_at = format_rfc3339(options_.clock());

  const json event = {{"event", "resolve"},
                      {"flag_id", f.flag_id},
                      {"decision", f.decision},
                      {"resolved_at", f.resolved_at}};
  write_line(kFlagsFile, dump_line(event));

  std::unique_lock lock(index_mu_);
  flags_[flag_id] = f;
  return f;
}

std::optional<FlagRecord> AuditTrace::find_flag(const std::string& flag_id) const {
  std::shared_lock lock(index_mu_);
  const auto it = flags_.find(flag_id);
  if (it == flags_.end()) return std::nullopt;
  return it->second;
}

std::vector<FlagRecord> AuditTrace::flags() const {
  std::shared_lock lock(index_mu_);
  std::vector<FlagRecord> out;
  for (const auto& [id, f] : flags_) out.push_back(f);
  return out;
}

RatingRecord AuditTrace::record_rating(const std::string& conversation_id,
                                       std::uint64_t log_position, int rating,
                                       std::optional<std::string> suggestion) {
  const auto target = find_exchange(conversation_id, log_position);
  if (!target) {
    throw Error(ErrorCode::UnknownTarget,
                conversation_id + "#" + std::to_string(log_position) + " does not exist");
  }
  if (target->speaker != Speaker::Bot) {
    throw Error(ErrorCode::NotBotTurn, "ratings apply to bot turns only");
  }
  if (rating != -1 && rating != 1) {
    throw Error(ErrorCode::InvalidRating, "rating must be -1 or +1, got " + std::to_string(rating));
  }

  std::lock_guard side(side_mu_);
  RatingRecord r;
  {
    std::shared_lock lock(index_mu_);
    r.rating_id = padded_id("rating", next_rating_);
  }
  r.conversation_id = conversation_id;
  r.log_position = log_position;
  r.rating = rating;
  r.suggestion = std::move(suggestion);
  r.created_at = format_rfc3339(options_.clock());
  write_line(kRatingsFile, dump_line(json(r)));

  std::unique_lock lock(index_mu_);
  ratings_.push_back(r);
  ++next_rating_;
  return r;
}

std::vector<RatingRecord> AuditTrace::ratings(std::optional<DateRange> range) const {
  std::shared_lock lock(index_mu_);
  std::vector<RatingRecord> out;
  for (const auto& r : ratings_) {
    if (!range || range->contains(utc_day(parse_rfc3339(r.created_at)))) out.push_back(r);
  }
  return out;
}

void AuditTrace::append_event(const std::string& stream, const json& event) {
  if (!valid_stream_name(stream)) {
    throw Error(ErrorCode::StorageFailure, "invalid event stream name '" + stream + "'");
  }
  std::lock_guard side(side_mu_);
  write_line("events-" + stream + ".jsonl", dump_line(event));
  std::unique_lock lock(index_mu_);
  events_[stream].push_back(event);
}

std::vector<json> AuditTrace::events(const std::string& stream) const {
  std::shared_lock lock(index_mu_);
  const auto it = events_.find(stream);
  return it == events_.end() ? std::vector<json>{} : it->second;
}

}  // namespace safeguard
