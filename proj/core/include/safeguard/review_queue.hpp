#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/persona.hpp"

namespace safeguard {

class AuditTrace;

enum class ReviewKind { FlaggedResponse, GateDiscard };
enum class ReviewDecision { Keep, RemovePersona, Dismiss };
enum class ReviewState { Pending, Decided };

std::string_view review_kind_name(ReviewKind k);          // flagged_response | gate_discard
std::optional<ReviewKind> parse_review_kind(std::string_view s);
std::string_view review_decision_name(ReviewDecision d);  // keep | remove_persona | dismiss
std::optional<ReviewDecision> parse_review_decision(std::string_view s);

struct ReviewItem {
  std::string item_id;
  ReviewKind kind = ReviewKind::FlaggedResponse;
  std::string persona_id;
  std::optional<std::string> flag_id;
  std::optional<std::string> gate_report_id;
  std::optional<std::string> conversation_id;
  std::optional<std::uint64_t> log_position;
  nlohmann::json image_verdict;  // null unless an image block
  std::string created_at;
  ReviewState state = ReviewState::Pending;
  std::optional<ReviewDecision> decision;
  std::string reviewer;
  std::string decided_at;
};

nlohmann::json review_item_to_json(const ReviewItem& item);
ReviewItem review_item_from_json(const nlohmann::json& j);

/// Backlog of moderator work, persisted in the audit trace as the
/// `review_items` (creations) and `review_decisions` streams and rebuilt
/// from them on construction.
class ReviewQueue {
 public:
  explicit ReviewQueue(AuditTrace& audit);

  /// Assigns item_id and created_at, persists, returns the stored item.
  ReviewItem create(ReviewItem draft);

  enum class Outcome { Decided, NotFound, AlreadyDecided };
  struct DecideResult {
    Outcome outcome;
    std::optional<ReviewItem> item;
  };

  /// Compare-and-set Pending -> Decided. `effects` runs under the queue lock
  /// after the state check and before the decision is persisted; if it
  /// throws, the item stays Pending and the exception propagates.
  DecideResult decide(const std::string& item_id, ReviewDecision decision,
                      const std::string& reviewer,
                      const std::function<void(const ReviewItem&)>& effects = {});

  std::optional<ReviewItem> find(const std::string& item_id) const;

  /// Pending items in creation order, optionally filtered.
  std::vector<ReviewItem> pending(std::optional<ReviewKind> kind = std::nullopt,
                                  const std::optional<std::string>& persona_id = std::nullopt) const;

  std::vector<ReviewItem> all() const;

  bool has_item_for_flag(const std::string& flag_id) const;

 private:
  AuditTrace& audit_;
  mutable std::mutex mu_;
  std::vector<ReviewItem> items_;
  std::map<std::string, std::size_t> by_id_;
};

/// Persona state as published by the gateway.
struct PersonaEntry {
  Persona persona;
  std::optional<std::string> gate_report_id;
  nlohmann::json image_verdict;  // null when no image was submitted
  bool removed = false;          // discarded by a moderator after approval
  std::string updated_at;
};

nlohmann::json persona_entry_to_json(const PersonaEntry& e);
PersonaEntry persona_entry_from_json(const nlohmann::json& j);

/// Snapshots in the `personas` stream; the last one per id wins on replay.
class PersonaRegistry {
 public:
  explicit PersonaRegistry(AuditTrace& audit);

  void put(PersonaEntry entry);
  std::optional<PersonaEntry> find(const std::string& persona_id) const;
  std::vector<PersonaEntry> list() const;  // by persona_id

  /// Approved -> Discarded with removed = true. Returns false when the
  /// persona is unknown; already discarded personas are left as they are.
  bool remove(const std::string& persona_id);

 private:
  AuditTrace& audit_;
  mutable std::mutex mu_;
  std::map<std::string, PersonaEntry> entries_;
};

}  // namespace safeguard
