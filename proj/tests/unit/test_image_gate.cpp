#include <doctest.h>

#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>

#include "safeguard/digest.hpp"
#include "safeguard/error.hpp"
#include "safeguard/image_gate.hpp"
#include "temp_dir.hpp"

using namespace safeguard;

namespace {

// FIPS 180-2 test vector.
constexpr const char* kAbcDigest = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";

std::vector<std::byte> bytes_of(std::string_view s) {
  const auto b = as_bytes(s);
  return {b.begin(), b.end()};
}

class FaultyClassifier final : public ExternalImageClassifier {
 public:
  ExternalImageVerdict classify(const ExternalImageRequest&) override {
    throw Error(ErrorCode::ExternalClassifierFailure, "transport: connection reset");
  }
};

class CountingClassifier final : public ExternalImageClassifier {
 public:
  explicit CountingClassifier(ImageDecision d) : decision_(d) {}
  ExternalImageVerdict classify(const ExternalImageRequest& r) override {
    ++calls;
    last_mime = r.mime;
    return {decision_, "model says so"};
  }
  int calls = 0;
  std::string last_mime;

 private:
  ImageDecision decision_;
};

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected safeguard::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("digest is SHA-256 of the exact bytes") {
  CHECK(sha256_hex(std::string_view("abc")) == kAbcDigest);
  const auto v = moderate_image(bytes_of("abc"), Blocklist{});
  CHECK(v.image_ref == std::string("sha256:") + kAbcDigest);
}

TEST_CASE("blocklisted digest is blocked") {
  const auto bl = parse_blocklist(std::string("# known bad\n") + kAbcDigest + "\n");
  const auto v = moderate_image(bytes_of("abc"), bl);
  CHECK(v.decision == ImageDecision::Blocked);
  CHECK(v.source == VerdictSource::Blocklist);
}

TEST_CASE("unlisted image without external classifier is allowed, blocklist-only") {
  const auto v = moderate_image(bytes_of("abd"), parse_blocklist(kAbcDigest));
  CHECK(v.decision == ImageDecision::Allowed);
  CHECK(v.source == VerdictSource::Blocklist);
  CHECK(v.detail == "blocklist-only");
}

TEST_CASE("external transport error fails closed") {
  FaultyClassifier faulty;
  const auto v = moderate_image(bytes_of("abd"), Blocklist{}, &faulty);
  CHECK(v.decision == ImageDecision::Blocked);
  CHECK(v.source == VerdictSource::FailClosed);
  CHECK(v.detail->find("connection reset") != std::string::npos);
}

TEST_CASE("blocklist dominates the external verdict") {
  CountingClassifier allow(ImageDecision::Allowed);
  const auto v = moderate_image(bytes_of("abc"), parse_blocklist(kAbcDigest), &allow);
  CHECK(v.decision == ImageDecision::Blocked);
  CHECK(v.source == VerdictSource::Blocklist);
  CHECK(allow.calls == 0);
}

TEST_CASE("external verdict is used for unlisted images") {
  CountingClassifier block(ImageDecision::Blocked);
  CountingClassifier allow(ImageDecision::Allowed);
  const std::string png("\x89PNG\r\n\x1a\nrest", 12);
  const auto b = moderate_image(bytes_of(png), Blocklist{}, &block);
  CHECK(b.decision == ImageDecision::Blocked);
  CHECK(b.source == VerdictSource::External);
  CHECK(block.last_mime == "image/png");
  const auto a = moderate_image(bytes_of(png), Blocklist{}, &allow);
  CHECK(a.decision == ImageDecision::Allowed);
  CHECK(a.detail == "model says so");
}

TEST_CASE("empty image is rejected") {
  CHECK(code_of([] { moderate_image({}, Blocklist{}); }) == ErrorCode::EmptyImage);
}

TEST_CASE("no path yields Allowed after an external fault") {
  // Randomized inputs and malformed recorded bodies: every fault ends Blocked.
  std::mt19937_64 gen(17);
  const std::vector<std::string> bad_bodies = {"", "{}", "not json", R"({"decision":"maybe"})",
                                               R"({"decision":1})", "[]"};
  for (int i = 0; i < 200; ++i) {
    std::string img(1 + gen() % 64, '\0');
    for (auto& c : img) c = static_cast<char>(gen());
    RecordedImageClassifier rec({}, bad_bodies[gen() % bad_bodies.size()]);
    const auto v = moderate_image(bytes_of(img), Blocklist{}, &rec);
    CHECK(v.decision == ImageDecision::Blocked);
    CHECK(v.source == VerdictSource::FailClosed);
  }
}

TEST_CASE("recorded stub is deterministic") {
  const auto j = nlohmann::json::parse(std::string(R"({")") + kAbcDigest +
                                       R"(":{"decision":"blocked","detail":"nsfw"},"*":{"decision":"allowed"}})");
  auto rec = RecordedImageClassifier::from_json(j);
  for (int i = 0; i < 3; ++i) {
    CHECK(moderate_image(bytes_of("abc"), Blocklist{}, &rec).decision == ImageDecision::Blocked);
    CHECK(moderate_image(bytes_of("xyz"), Blocklist{}, &rec).decision == ImageDecision::Allowed);
  }
  RecordedImageClassifier strict({});
  CHECK(moderate_image(bytes_of("xyz"), Blocklist{}, &strict).source == VerdictSource::FailClosed);
}

TEST_CASE("blocklist file format") {
  testing::TempDir dir;
  {
    std::ofstream(dir / "bl.txt") << "# header\n\n" << kAbcDigest << "  # trailing comment\r\n";
  }
  const auto bl = load_blocklist_file(dir / "bl.txt");
  CHECK(bl.size() == 1);
  CHECK(bl.contains(kAbcDigest));
  CHECK(code_of([] { parse_blocklist("xyz\n"); }) == ErrorCode::MalformedLine);
  std::string upper = kAbcDigest;
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  CHECK(code_of([&] { parse_blocklist(upper); }) == ErrorCode::MalformedLine);
  CHECK(code_of([&] { load_blocklist_file(dir / "missing.txt"); }) == ErrorCode::IoError);
}

TEST_CASE("mime sniffing") {
  CHECK(sniff_mime(bytes_of("\xFF\xD8\xFF\xE0")) == "image/jpeg");
  CHECK(sniff_mime(bytes_of("GIF89a")) == "image/gif");
  CHECK(sniff_mime(bytes_of("RIFF\0\0\0\0WEBPVP8 ")) == "application/octet-stream");  // NUL cut
  CHECK(sniff_mime(bytes_of(std::string("RIFF\0\0\0\0WEBPVP8 ", 16))) == "image/webp");
  CHECK(sniff_mime(bytes_of("hello")) == "application/octet-stream");
}

TEST_CASE("verdict json") {
  const auto v = moderate_image(bytes_of("abd"), Blocklist{});
  const auto j = verdict_to_json(v);
  CHECK(j["decision"] == "allowed");
  CHECK(j["source"] == "blocklist");
  CHECK(j["detail"] == "blocklist-only");
}

TEST_CASE("http classifier speaks the wire contract") {
  httplib::Server server;
  nlohmann::json seen;
  server.Post("/classify", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    const bool bad = seen["digest"] == kAbcDigest;
    res.set_content(bad ? R"({"decision":"blocked","detail":"explicit"})" : R"({"decision":"allowed"})",
                    "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpImageClassifier http("http://127.0.0.1:" + std::to_string(port) + "/classify");
  const auto blocked = moderate_image(bytes_of("abc"), Blocklist{}, &http);
  CHECK(blocked.decision == ImageDecision::Blocked);
  CHECK(blocked.source == VerdictSource::External);
  CHECK(blocked.detail == "explicit");
  CHECK(seen["mime"] == "application/octet-stream");
  CHECK(seen["bytes_b64"] == "YWJj");
  CHECK(moderate_image(bytes_of("abd"), Blocklist{}, &http).decision == ImageDecision::Allowed);

  HttpImageClassifier broken("http://127.0.0.1:" + std::to_string(port) + "/broken");
  CHECK(moderate_image(bytes_of("abd"), Blocklist{}, &broken).source == VerdictSource::FailClosed);

  server.stop();
  th.join();

  HttpImageClassifier down("http://127.0.0.1:" + std::to_string(port) + "/classify",
                           std::chrono::milliseconds(300));
  const auto v = moderate_image(bytes_of("abd"), Blocklist{}, &down);
  CHECK(v.decision == ImageDecision::Blocked);
  CHECK(v.source == VerdictSource::FailClosed);

  CHECK(code_of([] { HttpImageClassifier("https://x/y"); }) == ErrorCode::InvalidConfig);
}
