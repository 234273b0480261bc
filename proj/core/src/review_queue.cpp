#include "safeguard/review_queue.hpp"

#include <cstdio>

#include "safeguard/audit_trace.hpp"
#include "safeguard/error.hpp"

namespace safeguard {

using nlohmann::json;

std::string_view review_kind_name(ReviewKind k) {
  return k == ReviewKind::FlaggedResponse ? "flagged_response" : "gate_discard";
}

std::optional<ReviewKind> parse_review_kind(std::string_view s) {
  if (s == "flagged_response") return ReviewKind::FlaggedResponse;
  if (s == "gate_discard") return ReviewKind::GateDiscard;
  return std::nullopt;
}

std::string_view review_decision_name(ReviewDecision d) {
  switch (d) {
    case ReviewDecision::Keep: return "keep";
    case ReviewDecision::RemovePersona: return "remove_persona";
    case ReviewDecision::Dismiss: return "dismiss";
  }
  return "keep";
}

std::optional<ReviewDecision> parse_review_decision(std::string_view s) {
  if (s == "keep") return ReviewDecision::Keep;
  if (s == "remove_persona") return ReviewDecision::RemovePersona;
  if (s == "dismiss") return ReviewDecision::Dismiss;
  return std::nullopt;
}

namespace {

template <class T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<T>();
}

}  // namespace

json review_item_to_json(const ReviewItem& i) {
  return {{"item_id", i.item_id},
          {"kind", review_kind_name(i.kind)},
          {"persona_id", i.persona_id},
          {"flag_id", opt(i.flag_id)},
          {"gate_report_id", opt(i.gate_report_id)},
          {"conversation_id", opt(i.conversation_id)},
          {"log_position", opt(i.log_position)},
          {"image_verdict", i.image_verdict},
          {"created_at", i.created_at},
          {"state", i.state == ReviewState::Pending ? "pending" : "decided"},
          {"decision", i.decision ? json(review_decision_name(*i.decision)) : json(nullptr)},
          {"reviewer", i.decision ? json(i.reviewer) : json(nullptr)},
          {"decided_at", i.decision ? json(i.decided_at) : json(nullptr)}};
}

ReviewItem review_item_from_json(const json& j) {
  ReviewItem i;
  i.item_id = j.at("item_id").get<std::string>();
  const auto kind = parse_review_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::ParseError, "bad review kind");
  i.kind = *kind;
  i.persona_id = j.at("persona_id").get<std::string>();
  i.flag_id = get_opt<std::string>(j, "flag_id");
  i.gate_report_id = get_opt<std::string>(j, "gate_report_id");
  i.conversation_id = get_opt<std::string>(j, "conversation_id");
  i.log_position = get_opt<std::uint64_t>(j, "log_position");
  i.image_verdict = j.value("image_verdict", json(nullptr));
  i.created_at = j.at("created_at").get<std::string>();
  if (const auto d = get_opt<std::string>(j, "decision")) {
    i.decision = parse_review_decision(*d);
    if (!i.decision) throw Error(ErrorCode::ParseError, "bad review decision");
    i.state = ReviewState::Decided;
    i.reviewer = j.value("reviewer", std::string());
    i.decided_at = j.value("decided_at", std::string());
  }
  return i;
}

ReviewQueue::ReviewQueue(AuditTrace& audit) : audit_(audit) {
  try {
    for (const auto& e : audit_.events("review_items")) {
      auto item = review_item_from_json(e);
      item.state = ReviewState::Pending;
      item.decision.reset();
      by_id_[item.item_id] = items_.size();
      items_.push_back(std::move(item));
    }
    for (const auto& e : audit_.events("review_decisions")) {
      const auto it = by_id_.find(e.at("item_id").get<std::string>());
      if (it == by_id_.end()) continue;
      auto& item = items_[it->second];
      item.state = ReviewState::Decided;
      item.decision = parse_review_decision(e.at("decision").get<std::string>());
      item.reviewer = e.at("reviewer").get<std::string>();
      item.decided_at = e.at("decided_at").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::StorageFailure, std::string("review stream: ") + e.what());
  }
}

ReviewItem ReviewQueue::create(ReviewItem draft) {
  std::lock_guard lock(mu_);
  char id[32];
  std::snprintf(id, sizeof id, "review-%08zu", items_.size() + 1);
  draft.item_id = id;
  draft.created_at = format_rfc3339(audit_.now());
  draft.state = ReviewState::Pending;
  draft.decision.reset();
  audit_.append_event("review_items", review_item_to_json(draft));
  by_id_[draft.item_id] = items_.size();
  items_.push_back(draft);
  return draft;
}

ReviewQueue::DecideResult ReviewQueue::decide(const std::string& item_id, ReviewDecision decision,
                                              const std::string& reviewer,
                                              const std::function<void(const ReviewItem&)>& effects) {
  std::lock_guard lock(mu_);
  const auto it = by_id_.find(item_id);
  if (it == by_id_.end()) return {Outcome::NotFound, std::nullopt};
  ReviewItem& item = items_[it->second];
  if (item.state == ReviewState::Decided) return {Outcome::AlreadyDecided, item};

  ReviewItem next = item;
  next.state = ReviewState::Decided;
  next.decision = decision;
  next.reviewer = reviewer;
  next.decided_at = format_rfc3339(audit_.now());
  if (effects) effects(next);
  audit_.append_event("review_decisions", {{"item_id", next.item_id},
                                           {"kind", review_kind_name(next.kind)},
                                           {"persona_id", next.persona_id},
                                           {"flag_id", opt(next.flag_id)},
                                           {"gate_report_id", opt(next.gate_report_id)},
                                           {"decision", review_decision_name(decision)},
                                           {"reviewer", reviewer},
                                           {"decided_at", next.decided_at}});
  item = next;
  return {Outcome::Decided, item};
}

std::optional<ReviewItem> ReviewQueue::find(const std::string& item_id) const {
  std::lock_guard lock(mu_);
  const auto it = by_id_.find(item_id);
  if (it == by_id_.end()) return std::nullopt;
  return items_[it->second];
}

std::vector<ReviewItem> ReviewQueue::pending(std::optional<ReviewKind> kind,
                                             const std::optional<std::string>& persona_id) const {
  std::lock_guard lock(mu_);
  std::vector<ReviewItem> out;
  for (const auto& i : items_) {
    if (i.state != ReviewState::Pending) continue;
    if (kind && i.kind != *kind) continue;
    if (persona_id && i.persona_id != *persona_id) continue;
    out.push_back(i);
  }
  return out;
}

std::vector<ReviewItem> ReviewQueue::all() const {
  std::lock_guard lock(mu_);
  return items_;
}

bool ReviewQueue::has_item_for_flag(const std::string& flag_id) const {
  std::lock_guard lock(mu_);
  for (const auto& i : items_) {
    if (i.flag_id == flag_id) return true;
  }
  return false;
}

// ---- personas ----

json persona_entry_to_json(const PersonaEntry& e) {
  return {{"persona", persona_to_json(e.persona)},
          {"gate_report_id", opt(e.gate_report_id)},
          {"image_verdict", e.image_verdict},
          {"removed", e.removed},
          {"updated_at", e.updated_at}};
}

PersonaEntry persona_entry_from_json(const json& j) {
  PersonaEntry e;
  e.persona = parse_persona(j.at("persona"));
  e.gate_report_id = get_opt<std::string>(j, "gate_report_id");
  e.image_verdict = j.value("image_verdict", json(nullptr));
  e.removed = j.value("removed", false);
  e.updated_at = j.value("updated_at", std::string());
  return e;
}

PersonaRegistry::PersonaRegistry(AuditTrace& audit) : audit_(audit) {
  try {
    for (const auto& e : audit_.events("personas")) {
      auto entry = persona_entry_from_json(e);
      entries_[entry.persona.persona_id] = std::move(entry);
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::StorageFailure, std::string("persona stream: ") + e.what());
  }
}

void PersonaRegistry::put(PersonaEntry entry) {
  std::lock_guard lock(mu_);
  entry.updated_at = format_rfc3339(audit_.now());
  audit_.append_event("personas", persona_entry_to_json(entry));
  entries_[entry.persona.persona_id] = std::move(entry);
}

std::optional<PersonaEntry> PersonaRegistry::find(const std::string& persona_id) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(persona_id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::vector<PersonaEntry> PersonaRegistry::list() const {
  std::lock_guard lock(mu_);
  std::vector<PersonaEntry> out;
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

bool PersonaRegistry::remove(const std::string& persona_id) {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(persona_id);
  if (it == entries_.end()) return false;
  if (it->second.persona.status != PersonaStatus::Approved) return true;
  PersonaEntry next = it->second;
  next.persona.status = PersonaStatus::Discarded;
  next.removed = true;
  next.updated_at = format_rfc3339(audit_.now());
  audit_.append_event("personas", persona_entry_to_json(next));
  it->second = std::move(next);
  return true;
}

}  // namespace safeguard
