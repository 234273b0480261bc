#pragma once

#include <optional>
#include <string_view>

namespace safeguard {

enum class Speaker { User, Bot };

inline std::string_view speaker_name(Speaker s) { return s == Speaker::User ? "user" : "bot"; }

inline std::optional<Speaker> parse_speaker(std::string_view s) {
  if (s == "user") return Speaker::User;
  if (s == "bot") return Speaker::Bot;
  return std::nullopt;
}

}  // namespace safeguard
