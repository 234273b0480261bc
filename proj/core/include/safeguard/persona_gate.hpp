#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/lexicon.hpp"
#include "safeguard/persona.hpp"
#include "safeguard/responder.hpp"
#include "safeguard/safety_score.hpp"

namespace safeguard {

class AuditTrace;

/// Gate knobs. Defaults are operational choices, not measured values.
struct GatePolicy {
  std::uint32_t histories_per_persona = 100;  // H; 1000 at platform scale
  std::uint32_t samples_per_history = 1;      // k
  double response_flag_threshold = 0.05;      // theta: flag when ratio >= theta
  double persona_discard_threshold = 0.01;    // tau: discard when flagged fraction >= tau
  std::uint64_t seed = 0;

  /// Throws Error{InvalidPolicy}.
  void validate() const;

  friend bool operator==(const GatePolicy&, const GatePolicy&) = default;
};

nlohmann::json policy_to_json(const GatePolicy& p);
GatePolicy policy_from_json(const nlohmann::json& j);

enum class SampleStatus { Ok, Unavailable, Misbehaved };
std::string_view sample_status_name(SampleStatus s);

struct SampledResponse {
  std::string text;
  SampleStatus status = SampleStatus::Ok;
  std::string error;  // set when status != Ok
};

struct Classification {
  SafetyScore score;  // total_words == 0 for token-less text
  bool flagged = false;
};

/// Verdict on one response text. The baseline is the lexicon ratio; other
/// classifiers can be slotted in behind this interface.
class ResponseClassifier {
 public:
  virtual ~ResponseClassifier() = default;
  virtual Classification classify(std::string_view response) const = 0;
  virtual std::string id() const = 0;
};

class LexiconClassifier final : public ResponseClassifier {
 public:
  LexiconClassifier(std::shared_ptr<const CompiledLexicon> lexicon, double threshold);
  Classification classify(std::string_view response) const override;
  std::string id() const override;

 private:
  std::shared_ptr<const CompiledLexicon> lexicon_;
  double threshold_;
};

/// flagged = (no tokens) or (ratio >= theta). Total: never throws.
Classification classify_response(std::string_view response, const CompiledLexicon& lexicon,
                                  double theta);

/// Exactly k samples, in sample order. Responder failures are captured per
/// sample (Unavailable / Misbehaved) instead of propagating.
std::vector<SampledResponse> sample_responses(Responder& responder, const Persona& persona,
                                              const ConversationHistory& history,
                                              std::uint32_t k, std::uint64_t seed);

struct ResponseVerdict {
  std::string history_id;
  std::uint32_t history_index = 0;
  std::uint32_t sample_index = 0;
  std::string response;
  SampleStatus status = SampleStatus::Ok;
  std::string error;
  SafetyScore score;
  bool flagged = false;
};

struct GateReport {
  std::string report_id;
  std::string persona_id;
  std::uint32_t persona_revision = 0;
  GatePolicy policy;
  std::string lexicon_version;
  std::string classifier;
  std::string responder;
  std::vector<ResponseVerdict> verdicts;  // (history_index, sample_index) order
  std::uint64_t flagged_count = 0;
  double flagged_fraction = 0.0;
  PersonaStatus decision = PersonaStatus::Pending;
};

nlohmann::json report_to_json(const GateReport& r);

/// Canonical serialization; identical inputs give identical bytes.
std::string report_to_string(const GateReport& r);

struct GateOptions {
  /// Worker threads for history evaluation. With more than one, the
  /// responder must tolerate concurrent respond() calls. Output does not
  /// depend on this value.
  unsigned threads = 1;
};

/// Replays the first H histories into `persona`, samples k replies each and
/// classifies them. Discards when flagged_fraction >= tau (ties discard).
///
/// When `audit` is non-null, each replay (history turns plus the reply) is
/// logged as conversation `gate/<persona>/r<rev>/<history>/<sample>` and the
/// report is appended to the `gate_reports` event stream before
/// `persona.status` changes.
///
/// Throws Error{InsufficientHistories, LexiconMissing, InvalidPolicy,
/// InvalidTransition} before any evaluation.
GateReport moderate_persona(Persona& persona, Responder& responder,
                            std::span<const ConversationHistory> histories,
                            const GatePolicy& policy,
                            std::shared_ptr<const CompiledLexicon> lexicon,
                            AuditTrace* audit = nullptr, GateOptions options = {});

/// Same, with an arbitrary classifier in place of the lexicon baseline.
GateReport moderate_persona(Persona& persona, Responder& responder,
                            std::span<const ConversationHistory> histories,
                            const GatePolicy& policy, const ResponseClassifier& classifier,
                            const std::string& lexicon_version, AuditTrace* audit = nullptr,
                            GateOptions options = {});

/// One gate run per persona at a time.
class PersonaLocks {
 public:
  std::unique_lock<std::mutex> lock(const std::string& persona_id);

 private:
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

}  // namespace safeguard
