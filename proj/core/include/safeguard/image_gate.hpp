#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace safeguard {

enum class ImageDecision { Allowed, Blocked };
enum class VerdictSource { Blocklist, External, FailClosed };

std::string_view image_decision_name(ImageDecision d);  // "allowed" | "blocked"
std::string_view verdict_source_name(VerdictSource s);  // "blocklist" | "external" | "fail_closed"

struct ImageVerdict {
  std::string image_ref;  // "sha256:<hex>"
  ImageDecision decision = ImageDecision::Blocked;
  VerdictSource source = VerdictSource::FailClosed;
  std::optional<std::string> detail;

  bool blocked() const { return decision == ImageDecision::Blocked; }
  friend bool operator==(const ImageVerdict&, const ImageVerdict&) = default;
};

nlohmann::json verdict_to_json(const ImageVerdict& v);

/// Set of lowercase hex SHA-256 digests.
class Blocklist {
 public:
  Blocklist() = default;
  explicit Blocklist(std::unordered_set<std::string> digests);

  bool contains(std::string_view digest) const;
  std::size_t size() const { return digests_.size(); }
  void add(std::string digest);  // validates

 private:
  std::unordered_set<std::string> digests_;
};

/// One digest per line, `#` comments, blank lines ignored. Upper-case hex is
/// rejected so files stay canonical. Throws Error{MalformedLine}.
Blocklist parse_blocklist(std::string_view text);
Blocklist load_blocklist_file(const std::filesystem::path& path);

struct ExternalImageRequest {
  std::string digest;
  std::string mime;
  std::span<const std::byte> bytes;
};

struct ExternalImageVerdict {
  ImageDecision decision = ImageDecision::Blocked;
  std::optional<std::string> detail;
};

/// Optional second opinion after the blocklist. Implementations throw on
/// any transport or protocol fault; the gate turns that into a block.
class ExternalImageClassifier {
 public:
  virtual ~ExternalImageClassifier() = default;
  virtual ExternalImageVerdict classify(const ExternalImageRequest& request) = 0;
};

/// Wire body: `{"digest","mime","bytes_b64"}`.
nlohmann::json external_request_json(const ExternalImageRequest& request);
/// Parses `{"decision":"allowed"|"blocked","detail"?}`; throws
/// Error{ExternalClassifierFailure} on anything else.
ExternalImageVerdict parse_external_verdict(std::string_view body);

/// POSTs the wire body to `url` (http://host[:port]/path).
class HttpImageClassifier final : public ExternalImageClassifier {
 public:
  explicit HttpImageClassifier(std::string url,
                               std::chrono::milliseconds timeout = std::chrono::seconds(5));
  ExternalImageVerdict classify(const ExternalImageRequest& request) override;

 private:
  std::string host_;
  int port_ = 80;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

/// Replays recorded responses keyed by digest. Unknown digests get
/// `fallback` when set and otherwise throw, like an unreachable service.
class RecordedImageClassifier final : public ExternalImageClassifier {
 public:
  RecordedImageClassifier(std::map<std::string, std::string> bodies,
                          std::optional<std::string> fallback = std::nullopt);
  ExternalImageVerdict classify(const ExternalImageRequest& request) override;

  /// `{"<digest>": {"decision":...,"detail":...}, "*": {...}}`
  static RecordedImageClassifier from_json(const nlohmann::json& j);

 private:
  std::map<std::string, std::string> bodies_;
  std::optional<std::string> fallback_;
};

/// Magic-byte sniffing for png, jpeg, gif, webp; application/octet-stream
/// otherwise.
std::string sniff_mime(std::span<const std::byte> bytes);

/// Throws Error{EmptyImage}. Never returns Allowed after an external fault.
ImageVerdict moderate_image(std::span<const std::byte> image_bytes, const Blocklist& blocklist,
                            ExternalImageClassifier* external = nullptr);

}  // namespace safeguard
