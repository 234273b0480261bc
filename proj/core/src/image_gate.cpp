#include "safeguard/image_gate.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

#include "safeguard/digest.hpp"
#include "safeguard/error.hpp"

namespace safeguard {

using nlohmann::json;

std::string_view image_decision_name(ImageDecision d) {
  return d == ImageDecision::Allowed ? "allowed" : "blocked";
}

std::string_view verdict_source_name(VerdictSource s) {
  switch (s) {
    case VerdictSource::Blocklist: return "blocklist";
    case VerdictSource::External: return "external";
    case VerdictSource::FailClosed: return "fail_closed";
  }
  return "fail_closed";
}

json verdict_to_json(const ImageVerdict& v) {
  json j = {{"image_ref", v.image_ref},
            {"decision", image_decision_name(v.decision)},
            {"source", verdict_source_name(v.source)}};
  j["detail"] = v.detail ? json(*v.detail) : json(nullptr);
  return j;
}

namespace {

bool is_digest(std::string_view s) {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Blocklist::Blocklist(std::unordered_set<std::string> digests) {
  for (auto& d : digests) add(d);
}

bool Blocklist::contains(std::string_view digest) const {
  return digests_.count(std::string(digest)) != 0;
}

void Blocklist::add(std::string digest) {
  if (!is_digest(digest)) {
    throw Error(ErrorCode::MalformedLine, "not a lowercase sha-256 hex digest: " + digest);
  }
  digests_.insert(std::move(digest));
}

Blocklist parse_blocklist(std::string_view text) {
  Blocklist out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      out.add(std::string(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no) + ": " + e.detail());
    }
  }
  return out;
}

Blocklist load_blocklist_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_blocklist(ss.str());
}

json external_request_json(const ExternalImageRequest& request) {
  return {{"digest", request.digest},
          {"mime", request.mime},
          {"bytes_b64", base64_encode(request.bytes)}};
}

ExternalImageVerdict parse_external_verdict(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ExternalClassifierFailure, std::string("bad response body: ") + e.what());
  }
  if (!j.is_object() || !j.contains("decision") || !j["decision"].is_string()) {
    throw Error(ErrorCode::ExternalClassifierFailure, "response lacks a decision");
  }
  ExternalImageVerdict v;
  const auto d = j["decision"].get<std::string>();
  if (d == "allowed") {
    v.decision = ImageDecision::Allowed;
  } else if (d == "blocked") {
    v.decision = ImageDecision::Blocked;
  } else {
    throw Error(ErrorCode::ExternalClassifierFailure, "unknown decision: " + d);
  }
  if (j.contains("detail") && j["detail"].is_string()) v.detail = j["detail"].get<std::string>();
  return v;
}

HttpImageClassifier::HttpImageClassifier(std::string url, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  constexpr std::string_view scheme = "http://";
  if (url.rfind(scheme, 0) != 0) {
    throw Error(ErrorCode::InvalidConfig, "image classifier url must start with http://");
  }
  std::string rest = url.substr(scheme.size());
  const auto slash = rest.find('/');
  path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  std::string authority = rest.substr(0, slash);
  if (const auto colon = authority.rfind(':'); colon != std::string::npos) {
    try {
      port_ = std::stoi(authority.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "bad port in " + url);
    }
    authority.resize(colon);
  }
  if (authority.empty()) throw Error(ErrorCode::InvalidConfig, "missing host in " + url);
  host_ = authority;
}

ExternalImageVerdict HttpImageClassifier::classify(const ExternalImageRequest& request) {
  httplib::Client client(host_, port_);
  const auto secs = timeout_.count() / 1000;
  const auto usecs = (timeout_.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const auto res = client.Post(path_, external_request_json(request).dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::ExternalClassifierFailure,
                "transport: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::ExternalClassifierFailure, "status " + std::to_string(res->status));
  }
  return parse_external_verdict(res->body);
}

RecordedImageClassifier::RecordedImageClassifier(std::map<std::string, std::string> bodies,
                                                 std::optional<std::string> fallback)
    : bodies_(std::move(bodies)), fallback_(std::move(fallback)) {}

ExternalImageVerdict RecordedImageClassifier::classify(const ExternalImageRequest& request) {
  if (const auto it = bodies_.find(request.digest); it != bodies_.end()) {
    return parse_external_verdict(it->second);
  }
  if (fallback_) return parse_external_verdict(*fallback_);
  throw Error(ErrorCode::ExternalClassifierFailure, "no recorded response for " + request.digest);
}

RecordedImageClassifier RecordedImageClassifier::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "recorded responses must be an object");
  std::map<std::string, std::string> bodies;
  std::optional<std::string> fallback;
  for (const auto& [key, value] : j.items()) {
    if (key == "*") {
      fallback = value.dump();
    } else {
      bodies.emplace(key, value.dump());
    }
  }
  return RecordedImageClassifier(std::move(bodies), std::move(fallback));
}

std::string sniff_mime(std::span<const std::byte> bytes) {
  const auto starts = [&](std::initializer_list<unsigned> magic, std::size_t offset = 0) {
    if (bytes.size() < offset + magic.size()) return false;
    std::size_t i = offset;
    for (unsigned m : magic) {
      if (std::to_integer<unsigned>(bytes[i++]) != m) return false;
    }
    return true;
  };
  if (starts({0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A})) return "image/png";
  if (starts({0xFF, 0xD8, 0xFF})) return "image/jpeg";
  if (starts({'G', 'I', 'F', '8'})) return "image/gif";
  if (starts({'R', 'I', 'F', 'F'}) && starts({'W', 'E', 'B', 'P'}, 8)) return "image/webp";
  return "application/octet-stream";
}

ImageVerdict moderate_image(std::span<const std::byte> image_bytes, const Blocklist& blocklist,
                            ExternalImageClassifier* external) {
  if (image_bytes.empty()) throw Error(ErrorCode::EmptyImage, "image has no bytes");
  const std::string digest = sha256_hex(image_bytes);

  ImageVerdict v;
  v.image_ref = "sha256:" + digest;
  if (blocklist.contains(digest)) {
    v.decision = ImageDecision::Blocked;
    v.source = VerdictSource::Blocklist;
    v.detail = "digest on blocklist";
    return v;
  }
  if (!external) {
    v.decision = ImageDecision::Allowed;
    v.source = VerdictSource::Blocklist;
    v.detail = "blocklist-only";
    return v;
  }
  try {
    const auto ext = external->classify({digest, sniff_mime(image_bytes), image_bytes});
    v.decision = ext.decision;
    v.source = VerdictSource::External;
    v.detail = ext.detail;
  } catch (const std::exception& e) {
    v.decision = ImageDecision::Blocked;
    v.source = VerdictSource::FailClosed;
    v.detail = e.what();
  } catch (...) {
    v.decision = ImageDecision::Blocked;
    v.source = VerdictSource::FailClosed;
    v.detail = "external classifier fault";
  }
  return v;
}

}  // namespace safeguard
