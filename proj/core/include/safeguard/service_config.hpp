#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "safeguard/persona_gate.hpp"

namespace safeguard {

/// Flat view of a small TOML subset: `key = value` lines, `[section]`
/// headers (keys become "section.key"), `#` comments, basic strings with
/// \" \\ \n \t escapes, integers, floats and booleans.
using ConfigValue = std::variant<std::string, std::int64_t, double, bool>;
using ConfigTable = std::map<std::string, ConfigValue>;

/// Throws Error{InvalidConfig} naming the line.
ConfigTable parse_config_table(std::string_view text);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path log_dir = "var/audit";
  std::filesystem::path lexicon;
  std::filesystem::path histories;
  std::optional<std::filesystem::path> blocklist;
  std::optional<std::string> image_classifier_url;
  std::optional<std::filesystem::path> image_classifier_recorded;  // JSON of recorded replies
  std::optional<std::filesystem::path> releases;
  std::optional<std::filesystem::path> console_dir;
  /// "stub:<profile>" or "subprocess:<command line>".
  std::string responder = "stub:clean";
  std::string review_token;
  GatePolicy policy;
  unsigned gate_threads = 1;
  bool fsync = true;
  int report_window = 7;
  double report_alert_factor = 1.5;

  /// Port range, token presence and that every configured input path exists.
  /// The log directory is created when missing. Throws Error{InvalidConfig}.
  void validate() const;
};

/// Relative paths resolve against `base_dir`. Unknown keys are rejected.
ServiceConfig parse_service_config(std::string_view text,
                                   const std::filesystem::path& base_dir = ".");

/// Reads the file, then applies SAFEGUARD_REVIEW_TOKEN when set.
ServiceConfig load_service_config(const std::filesystem::path& path);

void apply_environment(ServiceConfig& config);

}  // namespace safeguard
