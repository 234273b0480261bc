#include "safeguard/responder.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <set>

#include "safeguard/error.hpp"
#include "safeguard/rng.hpp"

extern char** environ;

namespace safeguard {

using nlohmann::json;

json responder_request(const Persona& persona, const ConversationHistory& history,
                       std::uint64_t seed, std::uint32_t sample_index) {
  return {{"persona", persona_to_json(persona)},
          {"history", history_to_json(history)},
          {"seed", seed},
          {"sample_index", sample_index}};
}

StubProfile StubProfile::parse(std::string_view text) {
  if (text == "clean") return {Kind::Clean, 0.0};
  if (text == "nsfw") return {Kind::Nsfw, 1.0};
  if (text.rfind("mixed:", 0) == 0) {
    const std::string_view num = text.substr(6);
    double p = -1.0;
    const auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), p);
    if (ec == std::errc{} && ptr == num.data() + num.size() && p >= 0.0 && p <= 1.0) {
      return {Kind::Mixed, p};
    }
  }
  throw Error(ErrorCode::InvalidConfig,
              "stub profile must be clean|nsfw|mixed:<p in [0,1]>, got '" + std::string(text) + "'");
}

std::string StubProfile::to_string() const {
  switch (kind) {
    case Kind::Clean: return "clean";
    case Kind::Nsfw: return "nsfw";
    case Kind::Mixed: {
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof buf, unsafe_probability);
      return "mixed:" + std::string(buf, res.ptr);
    }
  }
  return "clean";
}

namespace {

constexpr const char* kCleanVocabulary[] = {
    "hello",   "friend", "sunny",  "garden", "tea",     "story",  "music",   "gentle",
    "bright",  "travel", "book",   "river",  "morning", "smile",  "coffee",  "walk",
    "kind",    "calm",   "puzzle", "laugh",  "window",  "cloud",  "bicycle", "recipe",
    "painting", "quiet", "letter", "forest", "journey", "wonder", "curious", "evening",
    "lantern", "meadow", "harbor", "pebble", "violin",  "maple",  "compass", "breeze",
};

}  // namespace

StubResponder::StubResponder(StubProfile profile, const CompiledLexicon& lexicon)
    : profile_(profile) {
  std::set<std::string> lexicon_tokens;
  for (const auto& e : lexicon.entries()) {
    lexicon_tokens.insert(e.pattern.begin(), e.pattern.end());
    nsfw_terms_.push_back(e.pattern_text());
  }
  for (const char* w : kCleanVocabulary) {
    if (!lexicon_tokens.count(w)) clean_words_.emplace_back(w);
  }
  if (clean_words_.empty()) {
    throw Error(ErrorCode::InvalidConfig, "lexicon covers the stub's entire clean vocabulary");
  }
  if (profile_.unsafe_probability > 0.0 && nsfw_terms_.empty()) {
    throw Error(ErrorCode::InvalidConfig, "stub profile " + profile_.to_string() +
                                              " needs a non-empty lexicon");
  }
}

std::uint64_t StubResponder::sample_seed(std::uint64_t seed, std::string_view persona_id,
                                         std::string_view history_id,
                                         std::uint32_t sample_index) {
  std::uint64_t s = rng::combine(seed, rng::hash_string(persona_id));
  s = rng::combine(s, rng::hash_string(history_id));
  return rng::combine(s, sample_index);
}

bool StubResponder::draws_unsafe(std::uint64_t sample_seed) const {
  rng::Stream stream(sample_seed);
  return stream.uniform() < profile_.unsafe_probability;
}

std::string StubResponder::respond(const Persona& persona, const ConversationHistory& history,
                                   std::uint64_t seed, std::uint32_t sample_index) {
  rng::Stream stream(sample_seed(seed, persona.persona_id, history.history_id, sample_index));
  const bool unsafe = stream.uniform() < profile_.unsafe_probability;
  const std::uint64_t slots = 6 + stream.below(7);

  std::string out;
  for (std::uint64_t i = 0; i < slots; ++i) {
    if (i) out.push_back(' ');
    // Unsafe replies put a lexicon term in every even slot.
    if (unsafe && i % 2 == 0) {
      out += nsfw_terms_[stream.below(nsfw_terms_.size())];
    } else {
      out += clean_words_[stream.below(clean_words_.size())];
    }
  }
  if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] = static_cast<char>(out[0] - 32);
  out.push_back('.');
  return out;
}

// --- SubprocessResponder ----------------------------------------------------

SubprocessResponder::SubprocessResponder(std::vector<std::string> argv,
                                         std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), timeout_(timeout) {
  if (argv_.empty()) throw Error(ErrorCode::InvalidConfig, "responder command is empty");
}

SubprocessResponder::~SubprocessResponder() { stop(); }

std::string SubprocessResponder::id() const {
  std::string s = "subprocess:";
  for (std::size_t i = 0; i < argv_.size(); ++i) {
    if (i) s.push_back(' ');
    s += argv_[i];
  }
  return s;
}

void SubprocessResponder::start() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw Error(ErrorCode::ResponderUnavailable, std::string("socketpair: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);

  std::vector<char*> args;
  for (auto& a : argv_) args.push_back(a.data());
  args.push_back(nullptr);

  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(fds[1]);
  if (rc != 0) {
    ::close(fds[0]);
    throw Error(ErrorCode::ResponderUnavailable, "spawn " + argv_[0] + ": " + std::strerror(rc));
  }
  pid_ = pid;
  to_child_ = from_child_ = fds[0];
  read_buffer_.clear();
}

void SubprocessResponder::stop() {
  if (to_child_ >= 0) ::close(to_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    ::kill(pid_, SIGTERM);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
  pid_ = -1;
  read_buffer_.clear();
}

bool SubprocessResponder::available() {
  std::lock_guard lock(mu_);
  try {
    if (pid_ < 0) start();
  } catch (const Error&) {
    return false;
  }
  int status = 0;
  if (::waitpid(pid_, &status, WNOHANG) != 0) {
    pid_ = -1;
    stop();
    return false;
  }
  return true;
}

std::string SubprocessResponder::respond(const Persona& persona,
                                         const ConversationHistory& history, std::uint64_t seed,
                                         std::uint32_t sample_index) {
  std::lock_guard lock(mu_);
  const auto unavailable = [this](const std::string& why) {
    stop();
    return Error(ErrorCode::ResponderUnavailable, why);
  };
  if (pid_ < 0) start();

  const std::string request = responder_request(persona, history, seed, sample_index).dump() + "\n";
  std::size_t sent = 0;
  while (sent < request.size()) {
    const ssize_t n = ::send(to_child_, request.data() + sent, request.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw unavailable(std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::size_t nl;
  while ((nl = read_buffer_.find('\n')) == std::string::npos) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw unavailable("responder timed out");
    pollfd pfd{from_child_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (pr < 0 && errno == EINTR) continue;
    if (pr <= 0) throw unavailable(pr == 0 ? "responder timed out" : std::strerror(errno));
    char buf[4096];
    const ssize_t n = ::read(from_child_, buf, sizeof buf);
    if (n <= 0) throw unavailable("responder closed the connection");
    read_buffer_.append(buf, static_cast<std::size_t>(n));
  }
  const std::string line = read_buffer_.substr(0, nl);
  read_buffer_.erase(0, nl + 1);

  try {
    const json reply = json::parse(line);
    if (reply.contains("error")) {
      throw Error(ErrorCode::ResponderUnavailable, "responder error: " + reply["error"].dump());
    }
    return reply.at("text").get<std::string>();
  } catch (const json::exception& e) {
    throw unavailable(std::string("bad responder reply: ") + e.what());
  }
}

void serve_responder(Responder& responder, int in_fd, int out_fd) {
  std::string buffer;
  char chunk[4096];
  const auto write_all = [out_fd](const std::string& s) {
    std::size_t off = 0;
    while (off < s.size()) {
      const ssize_t n = ::write(out_fd, s.data() + off, s.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        return false;
      }
      off += static_cast<std::size_t>(n);
    }
    return true;
  };

  for (;;) {
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      const std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (line.empty()) continue;
      json reply;
      try {
        const json req = json::parse(line);
        const Persona persona = parse_persona(req.at("persona"));
        const ConversationHistory history = parse_history(req.at("history"));
        reply = {{"text", responder.respond(persona, history, req.at("seed").get<std::uint64_t>(),
                                            req.at("sample_index").get<std::uint32_t>())}};
      } catch (const std::exception& e) {
        reply = {{"error", e.what()}};
      }
      if (!write_all(reply.dump(-1, ' ', false, json::error_handler_t::replace) + "\n")) return;
    }
    const ssize_t n = ::read(in_fd, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace safeguard
