#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/image_gate.hpp"
#include "safeguard/lexicon.hpp"
#include "safeguard/persona_gate.hpp"
#include "safeguard/responder.hpp"
#include "safeguard/safety_reporting.hpp"
#include "safeguard/service_config.hpp"
#include "safeguard/time_util.hpp"

namespace safeguard {

class AuditTrace;

/// Everything the HTTP service needs, already loaded.
struct GatewayDeps {
  std::shared_ptr<const CompiledLexicon> lexicon;
  std::vector<ConversationHistory> histories;
  std::unique_ptr<Responder> responder;
  Blocklist blocklist;
  std::unique_ptr<ExternalImageClassifier> image_classifier;  // optional
  std::vector<Release> releases;
  GatePolicy policy;
  unsigned gate_threads = 1;
  std::string review_token;
  std::filesystem::path log_dir;
  bool fsync = true;
  Clock clock = system_now;
  std::optional<std::filesystem::path> console_dir;
  int report_window = 7;
  double report_alert_factor = 1.5;
};

/// "stub:<profile>" or "subprocess:<argv split on spaces>". Subprocess
/// responders are wrapped so concurrent gate runs take turns.
std::unique_ptr<Responder> make_responder(std::string_view spec, const CompiledLexicon& lexicon);

/// Validates the config and loads every file it names.
GatewayDeps load_gateway_deps(const ServiceConfig& config);

/// Lexicon matches in `text` with token, byte and code point offsets:
/// `[{"token_start","token_length","byte_begin","byte_end","char_begin",
///    "char_end","category","pattern"}]`.
nlohmann::json annotate_matches(std::string_view text, const CompiledLexicon& lexicon);

/// HTTP front of the moderation pipeline.
///
///   POST /personas                       image gate, then persona gate
///   GET  /personas[?status=]             published (approved) personas by default
///   GET  /personas/{id}
///   POST /conversations/{id}/messages    append to the audit trace
///   POST /flags, POST /ratings
///   GET  /traces?conversation_id=|persona_id=
///   GET  /gate-reports/{id}
///   GET  /reports/daily?from&to&speaker&format&include_gate
///   GET  /reports/regressions?from&to&speaker&window&factor&include_gate
///   GET  /exports/ratings?from&to
///   GET  /review/queue, GET /review/{id}, POST /review/{id}/decision  (bearer token)
///   GET  /healthz, /console/* when a console directory is configured
class Gateway {
 public:
  explicit Gateway(GatewayDeps deps);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Binds without serving. Port 0 picks a free port. Returns the bound
  /// port; throws Error{IoError}.
  int bind(const std::string& host, int port);
  /// Serves until stop(); bind() first.
  void listen();
  /// bind + listen on a background thread; returns once ready.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  AuditTrace& audit();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace safeguard
