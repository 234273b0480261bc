#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "safeguard/lexicon.hpp"
#include "safeguard/persona.hpp"

namespace safeguard {

/// Produces a chatbot reply for a (persona, history) pair.
///
/// Contract: for a fixed responder identity, the reply is a pure function of
/// (persona, history, seed, sample_index). Implementations throw
/// Error{ResponderUnavailable} on transport failure; an empty reply is a
/// protocol violation the gate records as misbehaviour.
class Responder {
 public:
  virtual ~Responder() = default;

  virtual std::string respond(const Persona& persona, const ConversationHistory& history,
                              std::uint64_t seed, std::uint32_t sample_index) = 0;

  /// Stable identity string recorded in gate reports.
  virtual std::string id() const = 0;

  /// Cheap liveness check run before a gate starts. Defaults to true.
  virtual bool available() { return true; }
};

/// Wire form of one responder request:
/// `{"persona","history","seed","sample_index"}` -> `{"text"}`.
nlohmann::json responder_request(const Persona& persona, const ConversationHistory& history,
                                 std::uint64_t seed, std::uint32_t sample_index);

/// Always returns the same text.
class ConstantResponder final : public Responder {
 public:
  explicit ConstantResponder(std::string text) : text_(std::move(text)) {}

  std::string respond(const Persona&, const ConversationHistory&, std::uint64_t,
                      std::uint32_t) override {
    return text_;
  }
  std::string id() const override { return "constant"; }

 private:
  std::string text_;
};

/// Behaviour of the seeded stub: `clean`, `nsfw`, or `mixed:<p>` (unsafe
/// reply with probability p).
struct StubProfile {
  enum class Kind { Clean, Nsfw, Mixed };
  Kind kind = Kind::Clean;
  double unsafe_probability = 0.0;

  /// Throws Error{InvalidConfig}.
  static StubProfile parse(std::string_view text);
  std::string to_string() const;
};

/// Deterministic stand-in for a language model.
///
/// Each sample draws from `rng::Stream(StubResponder::sample_seed(...))`.
/// The first draw decides safety: the reply is unsafe when
/// `uniform() < unsafe_probability` (always for `nsfw`, never for `clean`).
/// Safe replies use only words absent from the lexicon; unsafe replies make
/// at least half their tokens lexicon terms.
class StubResponder final : public Responder {
 public:
  StubResponder(StubProfile profile, const CompiledLexicon& lexicon);

  std::string respond(const Persona& persona, const ConversationHistory& history,
                      std::uint64_t seed, std::uint32_t sample_index) override;
  std::string id() const override { return "stub:" + profile_.to_string(); }

  static std::uint64_t sample_seed(std::uint64_t seed, std::string_view persona_id,
                                   std::string_view history_id, std::uint32_t sample_index);

  /// Whether the sample is unsafe, without generating text.
  bool draws_unsafe(std::uint64_t sample_seed) const;

 private:
  StubProfile profile_;
  std::vector<std::string> clean_words_;
  std::vector<std::string> nsfw_terms_;  // single tokens or phrases
};

/// Out-of-process responder: runs `argv` and speaks newline-delimited JSON
/// over its stdin/stdout, one request line per reply line.
class SubprocessResponder final : public Responder {
 public:
  explicit SubprocessResponder(std::vector<std::string> argv,
                               std::chrono::milliseconds timeout = std::chrono::seconds(10));
  ~SubprocessResponder() override;

  SubprocessResponder(const SubprocessResponder&) = delete;
  SubprocessResponder& operator=(const SubprocessResponder&) = delete;

  std::string respond(const Persona& persona, const ConversationHistory& history,
                      std::uint64_t seed, std::uint32_t sample_index) override;
  std::string id() const override;
  bool available() override;

 private:
  void start();
  void stop();

  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string read_buffer_;
};

/// Serves the responder wire protocol on a pair of file descriptors until
/// EOF. Used by `safeguard responder-stub`.
void serve_responder(Responder& responder, int in_fd, int out_fd);

}  // namespace safeguard
