#include "safeguard/service_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "safeguard/error.hpp"

namespace safeguard {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_bare_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

// Value text may carry a trailing comment; strings may contain '#'.
ConfigValue parse_value(std::string_view v) {
  if (!v.empty() && v.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < v.size() && v[i] != '"'; ++i) {
      if (v[i] != '\\') {
        out += v[i];
        continue;
      }
      if (++i == v.size()) break;
      switch (v[i]) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: throw Error(ErrorCode::InvalidConfig, "unsupported escape");
      }
    }
    if (i >= v.size()) throw Error(ErrorCode::InvalidConfig, "unterminated string");
    const auto rest = trim(v.substr(i + 1));
    if (!rest.empty() && rest.front() != '#') throw Error(ErrorCode::InvalidConfig, "junk after string");
    return out;
  }
  if (const auto hash = v.find('#'); hash != std::string_view::npos) v = trim(v.substr(0, hash));
  if (v == "true") return true;
  if (v == "false") return false;
  std::string digits;
  for (char c : v) {
    if (c != '_') digits += c;
  }
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), i);
      ec == std::errc() && p == digits.data() + digits.size() && !digits.empty()) {
    return i;
  }
  double d = 0;
  if (auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), d);
      ec == std::errc() && p == digits.data() + digits.size() && !digits.empty()) {
    return d;
  }
  throw Error(ErrorCode::InvalidConfig, "cannot parse value '" + std::string(v) + "'");
}

std::string as_string(const ConfigValue& v, const std::string& key) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw Error(ErrorCode::InvalidConfig, key + " must be a string");
}

std::int64_t as_int(const ConfigValue& v, const std::string& key) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw Error(ErrorCode::InvalidConfig, key + " must be an integer");
}

double as_double(const ConfigValue& v, const std::string& key) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw Error(ErrorCode::InvalidConfig, key + " must be a number");
}

bool as_bool(const ConfigValue& v, const std::string& key) {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  throw Error(ErrorCode::InvalidConfig, key + " must be true or false");
}

}  // namespace

ConfigTable parse_config_table(std::string_view text) {
  ConfigTable table;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    try {
      if (line.front() == '[') {
        auto end = line.find(']');
        if (end == std::string_view::npos) throw Error(ErrorCode::InvalidConfig, "unclosed section");
        const auto name = trim(line.substr(1, end - 1));
        const auto rest = trim(line.substr(end + 1));
        if (!is_bare_key(name) || (!rest.empty() && rest.front() != '#')) {
          throw Error(ErrorCode::InvalidConfig, "bad section header");
        }
        section = std::string(name);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw Error(ErrorCode::InvalidConfig, "expected key = value");
      const auto key = trim(line.substr(0, eq));
      if (!is_bare_key(key)) throw Error(ErrorCode::InvalidConfig, "bad key");
      const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      if (table.count(full)) throw Error(ErrorCode::InvalidConfig, "duplicate key " + full);
      table.emplace(full, parse_value(trim(line.substr(eq + 1))));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, where + e.detail());
    }
  }
  return table;
}

ServiceConfig parse_service_config(std::string_view text, const std::filesystem::path& base_dir) {
  ServiceConfig c;
  const auto path = [&](const ConfigValue& v, const std::string& key) {
    std::filesystem::path p = as_string(v, key);
    return p.is_relative() ? base_dir / p : p;
  };
  const auto optional_path = [&](const ConfigValue& v,
                                 const std::string& key) -> std::optional<std::filesystem::path> {
    if (as_string(v, key).empty()) return std::nullopt;
    return path(v, key);
  };

  for (const auto& [key, v] : parse_config_table(text)) {
    if (key == "host") c.host = as_string(v, key);
    else if (key == "port") c.port = static_cast<int>(as_int(v, key));
    else if (key == "log_dir") c.log_dir = path(v, key);
    else if (key == "lexicon") c.lexicon = path(v, key);
    else if (key == "histories") c.histories = path(v, key);
    else if (key == "blocklist") c.blocklist = optional_path(v, key);
    else if (key == "image_classifier_url") {
      const auto s = as_string(v, key);
      if (!s.empty()) c.image_classifier_url = s;
    }
    else if (key == "image_classifier_recorded") c.image_classifier_recorded = optional_path(v, key);
    else if (key == "releases") c.releases = optional_path(v, key);
    else if (key == "console_dir") c.console_dir = optional_path(v, key);
    else if (key == "responder") c.responder = as_string(v, key);
    else if (key == "review_token") c.review_token = as_string(v, key);
    else if (key == "fsync") c.fsync = as_bool(v, key);
    else if (key == "gate.histories_per_persona") c.policy.histories_per_persona = static_cast<std::uint32_t>(as_int(v, key));
    else if (key == "gate.samples_per_history") c.policy.samples_per_history = static_cast<std::uint32_t>(as_int(v, key));
    else if (key == "gate.response_flag_threshold") c.policy.response_flag_threshold = as_double(v, key);
    else if (key == "gate.persona_discard_threshold") c.policy.persona_discard_threshold = as_double(v, key);
    else if (key == "gate.seed") c.policy.seed = static_cast<std::uint64_t>(as_int(v, key));
    else if (key == "gate.threads") c.gate_threads = static_cast<unsigned>(as_int(v, key));
    else if (key == "reports.window") c.report_window = static_cast<int>(as_int(v, key));
    else if (key == "reports.alert_factor") c.report_alert_factor = as_double(v, key);
    else throw Error(ErrorCode::InvalidConfig, "unknown key " + key);
  }
  return c;
}

void ServiceConfig::validate() const {
  if (port < 1 || port > 65535) throw Error(ErrorCode::InvalidConfig, "port must be in [1, 65535]");
  if (review_token.empty()) throw Error(ErrorCode::InvalidConfig, "review_token is required");
  if (gate_threads < 1) throw Error(ErrorCode::InvalidConfig, "gate.threads must be >= 1");
  if (report_window < 1 || !(report_alert_factor > 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "reports.window >= 1 and reports.alert_factor > 1 required");
  }
  try {
    policy.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.detail());
  }
  const auto must_exist = [](const std::filesystem::path& p, const char* what) {
    if (p.empty() || !std::filesystem::exists(p)) {
      throw Error(ErrorCode::InvalidConfig, std::string(what) + " not found: " + p.string());
    }
  };
  must_exist(lexicon, "lexicon");
  must_exist(histories, "histories");
  if (blocklist) must_exist(*blocklist, "blocklist");
  if (image_classifier_recorded) must_exist(*image_classifier_recorded, "image_classifier_recorded");
  if (releases) must_exist(*releases, "releases");
  if (console_dir) must_exist(*console_dir, "console_dir");
  if (image_classifier_url && image_classifier_recorded) {
    throw Error(ErrorCode::InvalidConfig, "set image_classifier_url or image_classifier_recorded, not both");
  }
  if (responder.rfind("stub:", 0) != 0 && responder.rfind("subprocess:", 0) != 0) {
    throw Error(ErrorCode::InvalidConfig, "responder must be stub:<profile> or subprocess:<command>");
  }
  std::error_code ec;
  std::filesystem::create_directories(log_dir, ec);
  if (ec) throw Error(ErrorCode::InvalidConfig, "cannot create log_dir " + log_dir.string());
}

void apply_environment(ServiceConfig& config) {
  if (const char* token = std::getenv("SAFEGUARD_REVIEW_TOKEN"); token && *token) {
    config.review_token = token;
  }
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto config = parse_service_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
  apply_environment(config);
  return config;
}

}  // namespace safeguard
