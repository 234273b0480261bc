#include "safeguard/persona.hpp"

#include <fstream>
#include <sstream>

#include "safeguard/error.hpp"

namespace safeguard {

using nlohmann::json;

std::string_view status_name(PersonaStatus s) {
  switch (s) {
    case PersonaStatus::Pending: return "pending";
    case PersonaStatus::Approved: return "approved";
    case PersonaStatus::Discarded: return "discarded";
  }
  return "pending";
}

std::optional<PersonaStatus> parse_status(std::string_view s) {
  if (s == "pending") return PersonaStatus::Pending;
  if (s == "approved") return PersonaStatus::Approved;
  if (s == "discarded") return PersonaStatus::Discarded;
  return std::nullopt;
}

void Persona::transition(PersonaStatus next) {
  if (status != PersonaStatus::Pending || next == PersonaStatus::Pending) {
    throw Error(ErrorCode::InvalidTransition,
                persona_id + ": " + std::string(status_name(status)) + " -> " +
                    std::string(status_name(next)));
  }
  status = next;
}

Persona Persona::revise(std::string new_name, std::vector<std::string> new_keywords) const {
  Persona p = *this;
  p.name = std::move(new_name);
  p.keywords = std::move(new_keywords);
  p.revision = revision + 1;
  p.status = PersonaStatus::Pending;
  return p;
}

Persona parse_persona(const json& j) {
  const auto invalid = [](const std::string& what) {
    return Error(ErrorCode::InvalidPersona, what);
  };
  if (!j.is_object()) throw invalid("persona must be a JSON object");

  Persona p;
  if (!j.contains("persona_id") || !j["persona_id"].is_string() ||
      j["persona_id"].get<std::string>().empty()) {
    throw invalid("persona_id must be a non-empty string");
  }
  p.persona_id = j["persona_id"].get<std::string>();
  if (!j.contains("name") || !j["name"].is_string()) throw invalid("name must be a string");
  p.name = j["name"].get<std::string>();

  if (!j.contains("keywords") || !j["keywords"].is_array() || j["keywords"].empty()) {
    throw invalid("keywords must be a non-empty array");
  }
  for (const auto& k : j["keywords"]) {
    if (!k.is_string() || k.get<std::string>().empty()) {
      throw invalid("keywords must be non-empty strings");
    }
    p.keywords.push_back(k.get<std::string>());
  }
  if (j.contains("image_ref") && !j["image_ref"].is_null()) {
    if (!j["image_ref"].is_string()) throw invalid("image_ref must be a string");
    p.image_ref = j["image_ref"].get<std::string>();
  }
  if (j.contains("revision")) {
    if (!j["revision"].is_number_unsigned()) throw invalid("revision must be unsigned");
    p.revision = j["revision"].get<std::uint32_t>();
  }
  if (j.contains("status")) {
    const auto s = j["status"].is_string() ? parse_status(j["status"].get<std::string>())
                                           : std::nullopt;
    if (!s) throw invalid("status must be pending|approved|discarded");
    p.status = *s;
  }
  return p;
}

Persona load_persona_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open persona " + path.string());
  try {
    return parse_persona(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidPersona, e.what());
  }
}

json persona_to_json(const Persona& p) {
  json j = {{"persona_id", p.persona_id}, {"name", p.name},        {"keywords", p.keywords},
            {"revision", p.revision},     {"status", status_name(p.status)}};
  j["image_ref"] = p.image_ref ? json(*p.image_ref) : json(nullptr);
  return j;
}

void validate_history(const ConversationHistory& h) {
  if (h.history_id.empty()) throw Error(ErrorCode::InvalidHistory, "history_id is empty");
  if (h.turns.empty()) throw Error(ErrorCode::InvalidHistory, h.history_id + ": no turns");
  if (h.turns.back().speaker != Speaker::User) {
    throw Error(ErrorCode::InvalidHistory, h.history_id + ": last turn must be the user's");
  }
}

ConversationHistory parse_history(const json& j) {
  ConversationHistory h;
  try {
    h.history_id = j.at("history_id").get<std::string>();
    for (const auto& t : j.at("turns")) {
      const auto speaker = parse_speaker(t.at("speaker").get<std::string>());
      if (!speaker) throw Error(ErrorCode::InvalidHistory, "speaker must be user|bot");
      h.turns.push_back(Turn{*speaker, t.at("text").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidHistory, e.what());
  }
  validate_history(h);
  return h;
}

json history_to_json(const ConversationHistory& h) {
  json turns = json::array();
  for (const auto& t : h.turns) {
    turns.push_back({{"speaker", speaker_name(t.speaker)}, {"text", t.text}});
  }
  return {{"history_id", h.history_id}, {"turns", std::move(turns)}};
}

std::vector<ConversationHistory> parse_histories(std::string_view jsonl) {
  std::vector<ConversationHistory> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < jsonl.size()) {
    std::size_t nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    const std::string_view line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(parse_history(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::InvalidHistory, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidHistory, "line " + std::to_string(line_no) + ": " + e.detail());
    }
  }
  return out;
}

std::vector<ConversationHistory> load_histories_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open histories " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_histories(ss.str());
}

}  // namespace safeguard
