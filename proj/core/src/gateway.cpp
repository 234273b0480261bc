#include "safeguard/gateway.hpp"

#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "safeguard/audit_trace.hpp"
#include "safeguard/digest.hpp"
#include "safeguard/error.hpp"
#include "safeguard/review_queue.hpp"

namespace safeguard {

using nlohmann::json;

namespace {

class SerializedResponder final : public Responder {
 public:
  explicit SerializedResponder(std::unique_ptr<Responder> inner) : inner_(std::move(inner)) {}
  std::string respond(const Persona& p, const ConversationHistory& h, std::uint64_t seed,
                      std::uint32_t i) override {
    std::lock_guard lock(mu_);
    return inner_->respond(p, h, seed, i);
  }
  std::string id() const override { return inner_->id(); }
  bool available() override {
    std::lock_guard lock(mu_);
    return inner_->available();
  }

 private:
  std::mutex mu_;
  std::unique_ptr<Responder> inner_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidPersona:
    case ErrorCode::InvalidHistory:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyImage:
    case ErrorCode::InvalidRating:
    case ErrorCode::InvalidDate:
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnsupportedFormat:
    case ErrorCode::InvalidWindow:
      return 400;
    case ErrorCode::UnknownTarget:
      return 404;
    case ErrorCode::PersonaMismatch:
    case ErrorCode::InvalidTransition:
      return 409;
    case ErrorCode::NotBotTurn:
      return 422;
    case ErrorCode::StorageFailure:
    case ErrorCode::ResponderUnavailable:
      return 503;
    default:
      return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, std::string_view detail) {
  send_json(res, status, {{"error", code}, {"detail", detail}});
}

json parse_body(const httplib::Request& req) {
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed JSON: ") + e.what());
  }
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::ParseError, std::string("missing field ") + key);
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ParseError, std::string("wrong type for ") + key);
  }
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

bool is_gate_conversation(std::string_view id) { return id.rfind("gate/", 0) == 0; }

}  // namespace

std::unique_ptr<Responder> make_responder(std::string_view spec, const CompiledLexicon& lexicon) {
  if (spec.rfind("stub:", 0) == 0) {
    return std::make_unique<StubResponder>(StubProfile::parse(spec.substr(5)), lexicon);
  }
  if (spec.rfind("subprocess:", 0) == 0) {
    std::vector<std::string> argv;
    std::istringstream ss{std::string(spec.substr(11))};
    for (std::string part; ss >> part;) argv.push_back(part);
    if (argv.empty()) throw Error(ErrorCode::InvalidConfig, "subprocess responder needs a command");
    return std::make_unique<SerializedResponder>(std::make_unique<SubprocessResponder>(argv));
  }
  throw Error(ErrorCode::InvalidConfig, "responder must be stub:<profile> or subprocess:<command>");
}

GatewayDeps load_gateway_deps(const ServiceConfig& config) {
  config.validate();
  GatewayDeps d;
  d.lexicon = std::make_shared<const CompiledLexicon>(load_lexicon_file(config.lexicon));
  d.histories = load_histories_file(config.histories);
  if (d.histories.size() < config.policy.histories_per_persona) {
    throw Error(ErrorCode::InvalidConfig,
                "histories file has " + std::to_string(d.histories.size()) + " entries, gate needs " +
                    std::to_string(config.policy.histories_per_persona));
  }
  d.responder = make_responder(config.responder, *d.lexicon);
  if (config.blocklist) d.blocklist = load_blocklist_file(*config.blocklist);
  if (config.image_classifier_url) {
    d.image_classifier = std::make_unique<HttpImageClassifier>(*config.image_classifier_url);
  } else if (config.image_classifier_recorded) {
    try {
      d.image_classifier = std::make_unique<RecordedImageClassifier>(
          RecordedImageClassifier::from_json(json::parse(read_file(*config.image_classifier_recorded))));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("recorded image replies: ") + e.what());
    }
  }
  if (config.releases) d.releases = load_releases_file(*config.releases);
  d.policy = config.policy;
  d.gate_threads = config.gate_threads;
  d.review_token = config.review_token;
  d.log_dir = config.log_dir;
  d.fsync = config.fsync;
  d.console_dir = config.console_dir;
  d.report_window = config.report_window;
  d.report_alert_factor = config.report_alert_factor;
  return d;
}

json annotate_matches(std::string_view text, const CompiledLexicon& lexicon) {
  const TokenStream tokens = tokenize(text);
  json out = json::array();
  for (const Match& m : lexicon.match(tokens)) {
    const auto& first = tokens.spans[m.start_index];
    const auto& last = tokens.spans[m.start_index + m.length - 1];
    const auto& entry = lexicon.entry(m);
    out.push_back({{"token_start", m.start_index},
                   {"token_length", m.length},
                   {"byte_begin", first.byte_begin},
                   {"byte_end", last.byte_end},
                   {"char_begin", first.char_begin},
                   {"char_end", last.char_end},
                   {"category", category_name(entry.category)},
                   {"pattern", entry.pattern_text()}});
  }
  return out;
}

struct Gateway::Impl {
  GatewayDeps deps;
  AuditTrace audit;
  PersonaRegistry registry;
  ReviewQueue queue;
  PersonaLocks locks;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Impl(GatewayDeps d)
      : deps(std::move(d)),
        audit({deps.log_dir, deps.fsync, deps.clock}),
        registry(audit),
        queue(audit) {
    if (!deps.lexicon) throw Error(ErrorCode::LexiconMissing, "gateway needs a lexicon");
    if (!deps.responder) throw Error(ErrorCode::InvalidConfig, "gateway needs a responder");
    if (deps.review_token.empty()) throw Error(ErrorCode::InvalidConfig, "review token is required");
    reconcile_flags();
    routes();
  }

  // Every open flag has a pending review item, even after a crash between
  // the two writes.
  void reconcile_flags() {
    for (const auto& f : audit.flags()) {
      if (f.resolution != FlagRecord::Resolution::Open || queue.has_item_for_flag(f.flag_id)) continue;
      queue.create(flag_item(f));
    }
  }

  ReviewItem flag_item(const FlagRecord& f) {
    ReviewItem item;
    item.kind = ReviewKind::FlaggedResponse;
    const auto ex = audit.find_exchange(f.conversation_id, f.log_position);
    item.persona_id = ex ? ex->persona_id : std::string();
    item.flag_id = f.flag_id;
    item.conversation_id = f.conversation_id;
    item.log_position = f.log_position;
    return item;
  }

  bool authorized(const httplib::Request& req) const {
    const auto h = req.get_header_value("Authorization");
    const std::string expected = "Bearer " + deps.review_token;
    if (h.size() != expected.size()) return false;
    unsigned char diff = 0;
    for (std::size_t i = 0; i < h.size(); ++i) diff |= static_cast<unsigned char>(h[i] ^ expected[i]);
    return diff == 0;
  }

  std::optional<json> find_gate_report(const std::string& id) const {
    for (const auto& e : audit.events("gate_reports")) {
      if (e.value("report_id", std::string()) == id) return std::optional<json>(e);
    }
    return std::nullopt;
  }

  json persona_view(const PersonaEntry& e) const {
    json j = persona_to_json(e.persona);
    j["gate_report_id"] = e.gate_report_id ? json(*e.gate_report_id) : json(nullptr);
    j["image_verdict"] = e.image_verdict;
    j["removed"] = e.removed;
    j["updated_at"] = e.updated_at;
    return j;
  }

  json trace_record(const ExchangeRecord& r) const {
    json j = json(r);
    j["matches"] = annotate_matches(r.text, *deps.lexicon);
    return j;
  }

  json review_view(const ReviewItem& item) const {
    json j = review_item_to_json(item);
    if (const auto p = registry.find(item.persona_id)) {
      j["persona"] = {{"name", p->persona.name},
                      {"status", status_name(p->persona.status)},
                      {"removed", p->removed}};
    } else {
      j["persona"] = nullptr;
    }
    j["excerpt"] = nullptr;
    j["gate_summary"] = nullptr;
    if (item.conversation_id && item.log_position) {
      if (const auto ex = audit.find_exchange(*item.conversation_id, *item.log_position)) {
        j["excerpt"] = {{"conversation_id", ex->conversation_id},
                        {"log_position", ex->log_position},
                        {"speaker", speaker_name(ex->speaker)},
                        {"text", ex->text},
                        {"matches", annotate_matches(ex->text, *deps.lexicon)}};
      }
    }
    if (item.gate_report_id) {
      if (const auto r = find_gate_report(*item.gate_report_id)) {
        j["gate_summary"] = {{"report_id", (*r)["report_id"]},
                             {"decision", (*r)["decision"]},
                             {"evaluated", (*r)["evaluated"]},
                             {"flagged_count", (*r)["flagged_count"]},
                             {"flagged_fraction", (*r)["flagged_fraction"]},
                             {"policy", (*r)["policy"]},
                             {"lexicon_version", (*r)["lexicon_version"]},
                             {"responder", (*r)["responder"]}};
        for (const auto& v : (*r)["verdicts"]) {
          if (!v.value("flagged", false)) continue;
          const auto text = v.value("response", std::string());
          j["excerpt"] = {{"conversation_id", "gate/" + item.persona_id + "/r" +
                                                  std::to_string((*r)["persona_revision"].get<std::uint32_t>()) +
                                                  "/" + v.value("history_id", std::string()) + "/" +
                                                  std::to_string(v.value("sample_index", 0))},
                          {"log_position", nullptr},
                          {"speaker", "bot"},
                          {"text", text},
                          {"matches", annotate_matches(text, *deps.lexicon)}};
          break;
        }
      }
    }
    return j;
  }

  // ---- handlers ----

  void submit_persona(const httplib::Request& req, httplib::Response& res) {
    json body;
    std::optional<std::string> image;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("persona")) throw Error(ErrorCode::InvalidPersona, "missing persona part");
      try {
        body = json::parse(req.get_file_value("persona").content);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidPersona, std::string("malformed persona JSON: ") + e.what());
      }
      if (req.has_file("image")) image = req.get_file_value("image").content;
    } else {
      body = parse_body(req);
      if (body.contains("persona")) {
        if (body.contains("image_b64")) {
          const auto bytes = base64_decode(field<std::string>(body, "image_b64"));
          image = std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
        }
        body = body["persona"];
      }
    }
    Persona persona = parse_persona(body);
    persona.status = PersonaStatus::Pending;
    if (image && image->empty()) throw Error(ErrorCode::EmptyImage, "image part is empty");

    auto lock = locks.lock(persona.persona_id);
    if (const auto existing = registry.find(persona.persona_id)) {
      if (existing->persona.status != PersonaStatus::Pending &&
          persona.revision <= existing->persona.revision) {
        send_json(res, 409, {{"error", "InvalidTransition"},
                             {"detail", persona.persona_id + " revision " +
                                            std::to_string(existing->persona.revision) + " is already " +
                                            std::string(status_name(existing->persona.status))},
                             {"persona", persona_view(*existing)}});
        return;
      }
    }

    PersonaEntry entry;
    json verdict_json = nullptr;
    if (image) {
      const auto verdict = moderate_image(as_bytes(*image), deps.blocklist, deps.image_classifier.get());
      verdict_json = verdict_to_json(verdict);
      persona.image_ref = verdict.image_ref;
      if (verdict.blocked()) {
        persona.transition(PersonaStatus::Discarded);
        entry.persona = persona;
        entry.image_verdict = verdict_json;
        registry.put(entry);
        ReviewItem item;
        item.kind = ReviewKind::GateDiscard;
        item.persona_id = persona.persona_id;
        item.image_verdict = verdict_json;
        const auto created = queue.create(item);
        send_json(res, 200, {{"status", status_name(persona.status)},
                             {"persona", persona_view(registry.find(persona.persona_id).value())},
                             {"gate_report_ref", nullptr},
                             {"image_verdict", verdict_json},
                             {"review_item_id", created.item_id}});
        return;
      }
    }

    if (!deps.responder->available()) {
      entry.persona = persona;
      entry.image_verdict = verdict_json;
      registry.put(entry);
      send_json(res, 503, {{"error", "ResponderUnavailable"},
                           {"detail", "responder " + deps.responder->id() + " is not reachable"},
                           {"persona", persona_view(entry)}});
      return;
    }

    const auto report = moderate_persona(persona, *deps.responder, deps.histories, deps.policy,
                                         deps.lexicon, &audit, {deps.gate_threads});
    entry.persona = persona;
    entry.image_verdict = verdict_json;
    entry.gate_report_id = report.report_id;
    registry.put(entry);
    json out = {{"status", status_name(persona.status)},
                {"persona", persona_view(registry.find(persona.persona_id).value())},
                {"gate_report_ref", report.report_id},
                {"flagged_fraction", report.flagged_fraction},
                {"image_verdict", verdict_json},
                {"review_item_id", nullptr}};
    if (report.decision == PersonaStatus::Discarded) {
      ReviewItem item;
      item.kind = ReviewKind::GateDiscard;
      item.persona_id = persona.persona_id;
      item.gate_report_id = report.report_id;
      out["review_item_id"] = queue.create(item).item_id;
    }
    send_json(res, 200, out);
  }

  void list_personas(const httplib::Request& req, httplib::Response& res) {
    const std::string status = query(req, "status").value_or("approved");
    std::optional<PersonaStatus> wanted;
    if (status != "all") {
      wanted = parse_status(status);
      if (!wanted) throw Error(ErrorCode::ParseError, "status must be approved, pending, discarded or all");
    }
    json items = json::array();
    for (const auto& e : registry.list()) {
      if (wanted && e.persona.status != *wanted) continue;
      items.push_back(persona_view(e));
    }
    send_json(res, 200, {{"personas", items}});
  }

  void post_message(const httplib::Request& req, httplib::Response& res) {
    const std::string conversation_id = req.matches[1];
    const json body = parse_body(req);
    const auto persona_id = field<std::string>(body, "persona_id");
    const auto speaker = parse_speaker(field<std::string>(body, "speaker"));
    if (!speaker) throw Error(ErrorCode::ParseError, "speaker must be user or bot");
    const auto text = field<std::string>(body, "text");
    std::optional<Timestamp> ts;
    if (body.contains("timestamp") && !body["timestamp"].is_null()) {
      ts = parse_rfc3339(field<std::string>(body, "timestamp"));
    }
    const auto entry = registry.find(persona_id);
    if (!entry || entry->persona.status != PersonaStatus::Approved) {
      send_error(res, 404, "UnknownPersona", persona_id + " is not a published persona");
      return;
    }
    if (is_gate_conversation(conversation_id)) {
      throw Error(ErrorCode::ParseError, "conversation ids starting with gate/ are reserved");
    }
    const auto pos = audit.append_exchange(conversation_id, persona_id, *speaker, text, ts);
    const auto rec = audit.find_exchange(conversation_id, pos);
    send_json(res, 200, {{"conversation_id", conversation_id},
                         {"log_position", pos},
                         {"timestamp", rec ? json(rec->timestamp) : json(nullptr)}});
  }

  void post_flag(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const auto flag = audit.flag_response(field<std::string>(body, "conversation_id"),
                                          field<std::uint64_t>(body, "log_position"),
                                          body.value("reason", std::string()));
    const auto item = queue.create(flag_item(flag));
    send_json(res, 201, {{"flag", json(flag)}, {"review_item_id", item.item_id}});
  }

  void post_rating(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    std::optional<std::string> suggestion;
    if (body.contains("suggestion") && !body["suggestion"].is_null()) {
      suggestion = field<std::string>(body, "suggestion");
    }
    const auto rating = audit.record_rating(field<std::string>(body, "conversation_id"),
                                            field<std::uint64_t>(body, "log_position"),
                                            field<int>(body, "rating"), suggestion);
    send_json(res, 201, json(rating));
  }

  void get_traces(const httplib::Request& req, httplib::Response& res) {
    const auto conv = query(req, "conversation_id");
    const auto persona = query(req, "persona_id");
    if (conv.has_value() == persona.has_value()) {
      throw Error(ErrorCode::ParseError, "pass exactly one of conversation_id, persona_id");
    }
    const auto records = audit.get_trace(conv ? TraceSelector::conversation(*conv)
                                              : TraceSelector::persona(*persona));
    json items = json::array();
    json personas = json::object();
    for (const auto& r : records) {
      items.push_back(trace_record(r));
      if (!personas.contains(r.persona_id)) {
        const auto p = registry.find(r.persona_id);
        personas[r.persona_id] = p ? json(status_name(p->persona.status)) : json(nullptr);
      }
    }
    send_json(res, 200, {{"records", items}, {"personas", personas}});
  }

  std::vector<CorpusRecord> report_corpus(const httplib::Request& req) const {
    const bool include_gate = query(req, "include_gate").value_or("false") == "true";
    std::vector<CorpusRecord> corpus;
    for (const auto& e : audit.all_exchanges()) {
      if (!include_gate && is_gate_conversation(e.conversation_id)) continue;
      corpus.push_back({e.conversation_id, parse_rfc3339(e.timestamp), e.speaker, e.text});
    }
    return corpus;
  }

  std::optional<DateRange> report_range(const httplib::Request& req) const {
    const auto from = query(req, "from");
    const auto to = query(req, "to");
    if (!from && !to) return std::nullopt;
    DateRange r{from ? parse_date(*from) : Date{std::chrono::year{1970}, std::chrono::month{1}, std::chrono::day{1}},
                to ? parse_date(*to) : Date{std::chrono::year{9999}, std::chrono::month{12}, std::chrono::day{31}}};
    if (r.to < r.from) throw Error(ErrorCode::InvalidDate, "from is after to");
    return r;
  }

  SafetySeries report_series(const httplib::Request& req) const {
    const auto speakers = parse_speaker_filter(query(req, "speaker").value_or("both"));
    const auto corpus = report_corpus(req);
    auto series = build_timeseries(corpus, *deps.lexicon, speakers, report_range(req));
    return mark_releases(std::move(series), deps.releases).series;
  }

  void daily_report(const httplib::Request& req, httplib::Response& res) {
    const auto format = parse_report_format(query(req, "format").value_or("json"));
    const auto body = export_report(report_series(req), format);
    res.status = 200;
    res.set_content(body, format == ReportFormat::Csv ? "text/csv" : "application/json");
  }

  void regressions(const httplib::Request& req, httplib::Response& res) {
    int window = deps.report_window;
    double factor = deps.report_alert_factor;
    try {
      if (const auto w = query(req, "window")) window = std::stoi(*w);
      if (const auto f = query(req, "factor")) factor = std::stod(*f);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidWindow, "window and factor must be numbers");
    }
    const auto alerts = detect_regressions(report_series(req), window, factor);
    send_json(res, 200, {{"window", window}, {"alert_factor", factor}, {"alerts", alerts_to_json(alerts)}});
  }

  void export_ratings(const httplib::Request& req, httplib::Response& res) {
    const auto range = report_range(req);
    std::string out;
    for (const auto& r : audit.ratings(range)) out += json(r).dump() + "\n";
    res.status = 200;
    res.set_content(out, "application/x-ndjson");
  }

  void review_queue(const httplib::Request& req, httplib::Response& res) {
    std::optional<ReviewKind> kind;
    if (const auto k = query(req, "kind")) {
      kind = parse_review_kind(*k);
      if (!kind) throw Error(ErrorCode::ParseError, "kind must be flagged_response or gate_discard");
    }
    std::size_t cursor = 0;
    std::size_t limit = 50;
    try {
      if (const auto c = query(req, "cursor")) cursor = std::stoul(*c);
      if (const auto l = query(req, "limit")) limit = std::stoul(*l);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "cursor and limit must be non-negative integers");
    }
    if (limit == 0 || limit > 500) throw Error(ErrorCode::ParseError, "limit must be in [1, 500]");
    const auto items = queue.pending(kind, query(req, "persona_id"));
    json page = json::array();
    for (std::size_t i = cursor; i < items.size() && i < cursor + limit; ++i) {
      page.push_back(review_view(items[i]));
    }
    const bool more = cursor + limit < items.size();
    send_json(res, 200, {{"items", page},
                         {"total_pending", items.size()},
                         {"next_cursor", more ? json(std::to_string(cursor + limit)) : json(nullptr)}});
  }

  void review_item(const httplib::Request& req, httplib::Response& res) {
    const auto item = queue.find(req.matches[1]);
    if (!item) {
      send_error(res, 404, "UnknownItem", std::string(req.matches[1]));
      return;
    }
    send_json(res, 200, review_view(*item));
  }

  void review_decide(const httplib::Request& req, httplib::Response& res) {
    const std::string item_id = req.matches[1];
    const json body = parse_body(req);
    const auto decision = parse_review_decision(field<std::string>(body, "decision"));
    if (!decision) throw Error(ErrorCode::ParseError, "decision must be keep, remove_persona or dismiss");
    const std::string reviewer = body.value("reviewer", std::string("moderator"));

    const auto result = queue.decide(item_id, *decision, reviewer, [&](const ReviewItem& next) {
      if (next.flag_id) audit.resolve_flag(*next.flag_id, std::string(review_decision_name(*decision)));
      if (*decision == ReviewDecision::RemovePersona && !next.persona_id.empty()) {
        registry.remove(next.persona_id);
      }
    });
    switch (result.outcome) {
      case ReviewQueue::Outcome::NotFound:
        send_error(res, 404, "UnknownItem", item_id);
        return;
      case ReviewQueue::Outcome::AlreadyDecided:
        send_json(res, 409, {{"error", "AlreadyDecided"},
                             {"detail", item_id + " was already decided"},
                             {"item", review_view(*result.item)}});
        return;
      case ReviewQueue::Outcome::Decided:
        send_json(res, 200, {{"item", review_view(*result.item)}});
        return;
    }
  }

  using Handler = void (Impl::*)(const httplib::Request&, httplib::Response&);

  httplib::Server::Handler wrap(Handler h, bool needs_token = false) {
    return [this, h, needs_token](const httplib::Request& req, httplib::Response& res) {
      if (needs_token && !authorized(req)) {
        res.set_header("WWW-Authenticate", "Bearer");
        send_error(res, 401, "Unauthorized", "missing or wrong bearer token");
        return;
      }
      try {
        (this->*h)(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.detail());
      } catch (const std::exception& e) {
        send_error(res, 500, "InternalError", e.what());
      }
    };
  }

  void routes() {
    server.Post("/personas", wrap(&Impl::submit_persona));
    server.Get("/personas", wrap(&Impl::list_personas));
    server.Get(R"(/personas/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto e = registry.find(req.matches[1]);
      if (!e) return send_error(res, 404, "UnknownPersona", std::string(req.matches[1]));
      send_json(res, 200, persona_view(*e));
    });
    server.Post(R"(/conversations/([^/]+)/messages)", wrap(&Impl::post_message));
    server.Post("/flags", wrap(&Impl::post_flag));
    server.Post("/ratings", wrap(&Impl::post_rating));
    server.Get("/traces", wrap(&Impl::get_traces));
    server.Get(R"(/gate-reports/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = find_gate_report(req.matches[1]);
      if (!r) return send_error(res, 404, "UnknownReport", std::string(req.matches[1]));
      send_json(res, 200, *r);
    });
    server.Get("/reports/daily", wrap(&Impl::daily_report));
    server.Get("/reports/regressions", wrap(&Impl::regressions));
    server.Get("/exports/ratings", wrap(&Impl::export_ratings));
    server.Get("/review/queue", wrap(&Impl::review_queue, true));
    server.Get(R"(/review/([^/]+))", wrap(&Impl::review_item, true));
    server.Post(R"(/review/([^/]+)/decision)", wrap(&Impl::review_decide, true));
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });
    if (deps.console_dir) server.set_mount_point("/console", deps.console_dir->string());
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      send_error(res, 500, "InternalError", "unhandled exception");
    });
  }
};

Gateway::Gateway(GatewayDeps deps) : impl_(std::make_unique<Impl>(std::move(deps))) {}

Gateway::~Gateway() { stop(); }

int Gateway::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->port = bound;
  return bound;
}

void Gateway::listen() { impl_->server.listen_after_bind(); }

int Gateway::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Gateway::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

AuditTrace& Gateway::audit() { return impl_->audit; }

}  // namespace safeguard
