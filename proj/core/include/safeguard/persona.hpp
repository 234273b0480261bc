#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/speaker.hpp"

namespace safeguard {

enum class PersonaStatus { Pending, Approved, Discarded };

std::string_view status_name(PersonaStatus s);
std::optional<PersonaStatus> parse_status(std::string_view s);

/// A user-created chatbot definition. Status moves Pending -> Approved or
/// Pending -> Discarded exactly once; edits produce a new Pending revision.
struct Persona {
  std::string persona_id;
  std::string name;
  std::vector<std::string> keywords;
  std::optional<std::string> image_ref;
  std::uint32_t revision = 0;
  PersonaStatus status = PersonaStatus::Pending;

  /// Throws Error{InvalidTransition} unless currently Pending and `next` is
  /// Approved or Discarded.
  void transition(PersonaStatus next);

  /// New Pending revision carrying the edited fields.
  Persona revise(std::string new_name, std::vector<std::string> new_keywords) const;

  friend bool operator==(const Persona&, const Persona&) = default;
};

/// Parses the persona file format
/// `{"persona_id","name","keywords":[...],"image_ref"?}`; optional
/// "revision" and "status" are read when present. Throws Error{InvalidPersona}.
Persona parse_persona(const nlohmann::json& j);
Persona load_persona_file(const std::filesystem::path& path);
nlohmann::json persona_to_json(const Persona& p);

struct Turn {
  Speaker speaker = Speaker::User;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

/// A logged conversation replayed into a candidate persona. Non-empty; the
/// last turn is the user's, so the responder speaks next.
struct ConversationHistory {
  std::string history_id;
  std::vector<Turn> turns;

  friend bool operator==(const ConversationHistory&, const ConversationHistory&) = default;
};

/// Throws Error{InvalidHistory}.
void validate_history(const ConversationHistory& h);
ConversationHistory parse_history(const nlohmann::json& j);
nlohmann::json history_to_json(const ConversationHistory& h);

/// JSONL, one history per line; blank lines skipped. Throws
/// Error{InvalidHistory} naming the line.
std::vector<ConversationHistory> parse_histories(std::string_view jsonl);
std::vector<ConversationHistory> load_histories_file(const std::filesystem::path& path);

}  // namespace safeguard
