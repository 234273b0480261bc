#include <doctest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <set>
#include <thread>

#include "safeguard/audit_trace.hpp"
#include "safeguard/error.hpp"
#include "safeguard/persona_gate.hpp"
#include "safeguard/rng.hpp"
#include "temp_dir.hpp"

using namespace safeguard;

namespace {

std::shared_ptr<const CompiledLexicon> demo_lexicon() {
  return std::make_shared<const CompiledLexicon>(
      load_lexicon("badx,violence\nvilex,sexual\nhatex,hate_speech\nvery cruelx,hate_speech\n"));
}

Persona pending(const std::string& id = "p1") {
  Persona p;
  p.persona_id = id;
  p.name = "Sunny";
  p.keywords = {"bubbly", "intelligent"};
  return p;
}

std::vector<ConversationHistory> histories(std::size_t n) {
  std::vector<ConversationHistory> out;
  for (std::size_t i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "h%03zu", i);
    out.push_back({id, {{Speaker::User, "hi there"}, {Speaker::Bot, "hello"}, {Speaker::User, "how are you"}}});
  }
  return out;
}

GatePolicy policy(std::uint32_t H, double theta, double tau, std::uint64_t seed = 0) {
  GatePolicy p;
  p.histories_per_persona = H;
  p.samples_per_history = 1;
  p.response_flag_threshold = theta;
  p.persona_discard_threshold = tau;
  p.seed = seed;
  return p;
}

// Independent regeneration of the stub's documented draw.
bool oracle_unsafe(std::uint64_t seed, const std::string& persona, const std::string& history,
                   std::uint32_t sample, double p) {
  std::uint64_t s = rng::combine(seed, rng::hash_string(persona));
  s = rng::combine(s, rng::hash_string(history));
  s = rng::combine(s, sample);
  rng::Stream stream(s);
  return stream.uniform() < p;
}

class ThrowingResponder final : public Responder {
 public:
  std::string respond(const Persona&, const ConversationHistory&, std::uint64_t,
                      std::uint32_t) override {
    throw Error(ErrorCode::ResponderUnavailable, "connection refused");
  }
  std::string id() const override { return "throwing"; }
};

// Unsafe only for the listed history ids.
class ScriptedResponder final : public Responder {
 public:
  explicit ScriptedResponder(std::set<std::string> bad) : bad_(std::move(bad)) {}
  std::string respond(const Persona&, const ConversationHistory& h, std::uint64_t,
                      std::uint32_t) override {
    return bad_.count(h.history_id) ? "badx badx ok" : "a lovely day";
  }
  std::string id() const override { return "scripted"; }

 private:
  std::set<std::string> bad_;
};

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected safeguard::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("classify_response") {
  TEST_CASE("clean text is not flagged") {
    const auto lex = load_lexicon("badx,violence\n");
    const auto c = classify_response("you are kind", lex, 0.1);
    CHECK(c.score.ratio == 0.0);
    CHECK_FALSE(c.flagged);
  }

  TEST_CASE("ratio at or above theta is flagged") {
    const auto lex = load_lexicon("badx,violence\n");
    const auto c = classify_response("badx badx ok", lex, 0.5);
    CHECK(c.score.matched_words == 2);
    CHECK(c.score.ratio == doctest::Approx(2.0 / 3.0));
    CHECK(c.flagged);
    CHECK(classify_response("badx ok", lex, 0.5).flagged);  // tie flags
    CHECK_FALSE(classify_response("badx ok ok", lex, 0.5).flagged);
  }

  TEST_CASE("token-less responses fail closed") {
    const auto lex = load_lexicon("badx,violence\n");
    CHECK(classify_response("", lex, 0.5).flagged);
    CHECK(classify_response("?! ...", lex, 0.5).flagged);
  }
}

TEST_SUITE("sample_responses") {
  TEST_CASE("constant stub") {
    ConstantResponder r("hello friend");
    const auto out = sample_responses(r, pending(), histories(1)[0], 3, 0);
    REQUIRE(out.size() == 3);
    for (const auto& s : out) {
      CHECK(s.text == "hello friend");
      CHECK(s.status == SampleStatus::Ok);
    }
  }

  TEST_CASE("seeded stub is reproducible and seed-sensitive") {
    StubResponder r(StubProfile::parse("mixed:0.5"), *demo_lexicon());
    const auto h = histories(1)[0];
    const auto a = sample_responses(r, pending(), h, 20, 42);
    const auto b = sample_responses(r, pending(), h, 20, 42);
    const auto c = sample_responses(r, pending(), h, 20, 43);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].text != c[i].text;
    CHECK(differs);
  }

  TEST_CASE("p=0.5, k=1000, seed 11: flagged count equals seeded recount") {
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("mixed:0.5"), *lex);
    const auto persona = pending();
    const auto h = histories(1)[0];
    const auto samples = sample_responses(r, persona, h, 1000, 11);

    int flagged = 0;
    int expected = 0;
    for (std::uint32_t i = 0; i < samples.size(); ++i) {
      flagged += classify_response(samples[i].text, *lex, 0.05).flagged ? 1 : 0;
      expected += oracle_unsafe(11, persona.persona_id, h.history_id, i, 0.5) ? 1 : 0;
    }
    CHECK(flagged == expected);
    CHECK(expected > 400);
    CHECK(expected < 600);
  }

  TEST_CASE("responder failures are recorded per sample") {
    ThrowingResponder down;
    const auto out = sample_responses(down, pending(), histories(1)[0], 2, 0);
    CHECK(out[0].status == SampleStatus::Unavailable);
    CHECK(out[0].error.find("connection refused") != std::string::npos);

    ConstantResponder empty("");
    CHECK(sample_responses(empty, pending(), histories(1)[0], 1, 0)[0].status ==
          SampleStatus::Misbehaved);
  }

  TEST_CASE("stub profiles") {
    CHECK(StubProfile::parse("clean").kind == StubProfile::Kind::Clean);
    CHECK(StubProfile::parse("nsfw").unsafe_probability == 1.0);
    CHECK(StubProfile::parse("mixed:0.1").unsafe_probability == 0.1);
    CHECK(StubProfile::parse("mixed:0.1").to_string() == "mixed:0.1");
    CHECK(code_of([] { StubProfile::parse("mixed:1.5"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { StubProfile::parse("spicy"); }) == ErrorCode::InvalidConfig);
    CHECK(code_of([] { StubResponder(StubProfile::parse("nsfw"), load_lexicon("")); }) ==
          ErrorCode::InvalidConfig);
  }
}

TEST_SUITE("moderate_persona") {
  TEST_CASE("always-clean stub approves") {
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("clean"), *lex);
    auto persona = pending();
    const auto hs = histories(100);
    const auto report = moderate_persona(persona, r, hs, policy(100, 0.05, 0.01), lex);
    CHECK(report.flagged_fraction == 0.0);
    CHECK(report.decision == PersonaStatus::Approved);
    CHECK(persona.status == PersonaStatus::Approved);
    CHECK(report.lexicon_version == lex->version_tag());
  }

  TEST_CASE("always-NSFW stub discards") {
    ConstantResponder r("badx");
    auto persona = pending();
    const auto hs = histories(10);
    const auto report = moderate_persona(persona, r, hs, policy(10, 0.5, 0.01), demo_lexicon());
    CHECK(report.flagged_fraction == 1.0);
    CHECK(report.decision == PersonaStatus::Discarded);
    CHECK(persona.status == PersonaStatus::Discarded);
  }

  TEST_CASE("mixed p=0.1, H=100, seed 7 discards with the recounted fraction") {
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("mixed:0.1"), *lex);
    auto persona = pending();
    const auto hs = histories(100);
    const auto report = moderate_persona(persona, r, hs, policy(100, 0.05, 0.01, 7), lex);

    int expected = 0;
    for (const auto& h : hs) expected += oracle_unsafe(7, "p1", h.history_id, 0, 0.1) ? 1 : 0;
    REQUIRE(expected > 0);
    CHECK(report.flagged_count == static_cast<std::uint64_t>(expected));
    CHECK(report.flagged_fraction == expected / 100.0);
    CHECK(report.decision == PersonaStatus::Discarded);
  }

  TEST_CASE("flagged fraction equal to tau discards") {
    ScriptedResponder r({"h007"});
    auto persona = pending();
    const auto hs = histories(100);
    const auto report = moderate_persona(persona, r, hs, policy(100, 0.5, 0.01), demo_lexicon());
    CHECK(report.flagged_count == 1);
    CHECK(report.flagged_fraction == 0.01);
    CHECK(report.decision == PersonaStatus::Discarded);

    auto other = pending("p2");
    const auto approved =
        moderate_persona(other, r, hs, policy(100, 0.5, 0.02), demo_lexicon());
    CHECK(approved.decision == PersonaStatus::Approved);
  }

  TEST_CASE("responder errors count as flagged verdicts") {
    ThrowingResponder r;
    auto persona = pending();
    const auto hs = histories(5);
    const auto report = moderate_persona(persona, r, hs, policy(5, 0.5, 1.0), demo_lexicon());
    CHECK(report.flagged_count == 5);
    CHECK(report.decision == PersonaStatus::Discarded);
    for (const auto& v : report.verdicts) CHECK(v.status == SampleStatus::Unavailable);
  }

  TEST_CASE("completeness: H*k verdicts in (history, sample) order") {
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("mixed:0.3"), *lex);
    auto persona = pending();
    auto p = policy(20, 0.05, 0.5, 3);
    p.samples_per_history = 4;
    const auto hs = histories(30);
    const auto report = moderate_persona(persona, r, hs, p, lex);
    REQUIRE(report.verdicts.size() == 80);
    for (std::size_t i = 0; i < report.verdicts.size(); ++i) {
      CHECK(report.verdicts[i].history_index == i / 4);
      CHECK(report.verdicts[i].sample_index == i % 4);
      CHECK(report.verdicts[i].history_id == hs[i / 4].history_id);
    }
  }

  TEST_CASE("determinism, including across thread counts") {
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("mixed:0.2"), *lex);
    const auto hs = histories(100);
    auto a = pending();
    auto b = pending();
    auto c = pending();
    const auto pol = policy(100, 0.05, 0.05, 99);
    const auto ra = report_to_string(moderate_persona(a, r, hs, pol, lex));
    const auto rb = report_to_string(moderate_persona(b, r, hs, pol, lex));
    const auto rc = report_to_string(moderate_persona(c, r, hs, pol, lex, nullptr, {4}));
    CHECK(ra == rb);
    CHECK(ra == rc);
  }

  TEST_CASE("threshold monotonicity") {
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("mixed:0.3"), *lex);
    const auto hs = histories(100);

    // Lowering tau never turns Discarded into Approved.
    bool was_discarded = false;
    for (double tau : {0.9, 0.5, 0.3, 0.2, 0.1, 0.05, 0.01}) {
      auto p = pending();
      const bool discarded =
          moderate_persona(p, r, hs, policy(100, 0.05, tau, 5), lex).decision ==
          PersonaStatus::Discarded;
      CHECK((!was_discarded || discarded));
      was_discarded = discarded;
    }
    // Raising theta never increases flagged_fraction.
    double prev = 2.0;
    for (double theta : {0.01, 0.2, 0.4, 0.5, 0.6, 0.9, 1.0}) {
      auto p = pending();
      const double ff = moderate_persona(p, r, hs, policy(100, theta, 0.5, 5), lex).flagged_fraction;
      CHECK(ff <= prev);
      prev = ff;
    }
  }

  TEST_CASE("preconditions") {
    const auto lex = demo_lexicon();
    ConstantResponder r("fine");
    const auto hs = histories(3);
    auto p = pending();
    CHECK(code_of([&] { moderate_persona(p, r, hs, policy(4, 0.5, 0.5), lex); }) ==
          ErrorCode::InsufficientHistories);
    CHECK(code_of([&] { moderate_persona(p, r, hs, policy(3, 0.5, 0.5), nullptr); }) ==
          ErrorCode::LexiconMissing);
    CHECK(code_of([&] { moderate_persona(p, r, hs, policy(3, 0.0, 0.5), lex); }) ==
          ErrorCode::InvalidPolicy);
    CHECK(code_of([&] { moderate_persona(p, r, hs, policy(3, 0.5, 1.5), lex); }) ==
          ErrorCode::InvalidPolicy);
    CHECK(p.status == PersonaStatus::Pending);

    moderate_persona(p, r, hs, policy(3, 0.5, 0.5), lex);
    CHECK(code_of([&] { moderate_persona(p, r, hs, policy(3, 0.5, 0.5), lex); }) ==
          ErrorCode::InvalidTransition);

    auto bad_history = histories(1);
    bad_history[0].turns.push_back({Speaker::Bot, "trailing bot turn"});
    auto q = pending("q");
    CHECK(code_of([&] { moderate_persona(q, r, bad_history, policy(1, 0.5, 0.5), lex); }) ==
          ErrorCode::InvalidHistory);
  }

  TEST_CASE("replays and the report land in the audit trace") {
    safeguard::testing::TempDir dir;
    AuditTrace audit({dir.path(), false});
    const auto lex = demo_lexicon();
    StubResponder r(StubProfile::parse("mixed:0.5"), *lex);
    auto persona = pending();
    auto p = policy(10, 0.05, 0.5, 1);
    p.samples_per_history = 2;
    const auto hs = histories(10);
    const auto report = moderate_persona(persona, r, hs, p, lex, &audit);

    const auto trace = audit.get_trace(TraceSelector::persona("p1"));
    CHECK(trace.size() == 20 * 4);
    for (const auto& v : report.verdicts) {
      const auto conv = audit.get_trace(TraceSelector::conversation(
          "gate/p1/r0/" + v.history_id + "/" + std::to_string(v.sample_index)));
      REQUIRE(conv.size() == 4);
      CHECK(conv.back().speaker == Speaker::Bot);
      CHECK(conv.back().text == v.response);
    }
    const auto events = audit.events("gate_reports");
    REQUIRE(events.size() == 1);
    CHECK(events[0]["report_id"] == "gate-p1-r0");
    CHECK(events[0]["decision"] == status_name(report.decision));
  }
}

TEST_SUITE("persona") {
  TEST_CASE("status transitions happen once") {
    auto p = pending();
    p.transition(PersonaStatus::Approved);
    CHECK(code_of([&] { p.transition(PersonaStatus::Discarded); }) == ErrorCode::InvalidTransition);
    const auto next = p.revise("Sunny 2", {"calm"});
    CHECK(next.revision == 1);
    CHECK(next.status == PersonaStatus::Pending);
  }

  TEST_CASE("persona file format") {
    const auto p = parse_persona(nlohmann::json::parse(
        R"({"persona_id":"p9","name":"Ava","keywords":["bubbly"],"image_ref":"img/ava.png"})"));
    CHECK(p.image_ref == "img/ava.png");
    CHECK(parse_persona(persona_to_json(p)) == p);
    CHECK(code_of([] { parse_persona(nlohmann::json::parse(R"({"persona_id":"x","name":"n","keywords":[]})")); }) ==
          ErrorCode::InvalidPersona);
    CHECK(code_of([] { parse_persona(nlohmann::json::parse(R"({"name":"n","keywords":["a"]})")); }) ==
          ErrorCode::InvalidPersona);
  }

  TEST_CASE("histories JSONL") {
    const auto hs = parse_histories(
        "{\"history_id\":\"a\",\"turns\":[{\"speaker\":\"user\",\"text\":\"hi\"}]}\n\n"
        "{\"history_id\":\"b\",\"turns\":[{\"speaker\":\"bot\",\"text\":\"yo\"},{\"speaker\":\"user\",\"text\":\"hey\"}]}\n");
    REQUIRE(hs.size() == 2);
    CHECK(hs[1].turns[0].speaker == Speaker::Bot);
    CHECK(parse_history(history_to_json(hs[1])) == hs[1]);
    CHECK(code_of([] { parse_histories("{\"history_id\":\"a\",\"turns\":[]}\n"); }) ==
          ErrorCode::InvalidHistory);
    CHECK(code_of([] { parse_histories("not json\n"); }) == ErrorCode::InvalidHistory);
  }
}

TEST_SUITE("responder wire protocol") {
  TEST_CASE("serve_responder answers like the wrapped responder") {
    const auto lex = demo_lexicon();
    StubResponder stub(StubProfile::parse("mixed:0.5"), *lex);
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    std::thread server([&] {
      serve_responder(stub, fds[1], fds[1]);
      ::close(fds[1]);
    });

    const auto h = histories(1)[0];
    const std::string req = responder_request(pending(), h, 5, 2).dump() + "\n";
    REQUIRE(::write(fds[0], req.data(), req.size()) == static_cast<ssize_t>(req.size()));
    std::string line;
    char c;
    while (::read(fds[0], &c, 1) == 1 && c != '\n') line.push_back(c);
    ::shutdown(fds[0], SHUT_WR);
    server.join();
    ::close(fds[0]);
    CHECK(nlohmann::json::parse(line)["text"] == stub.respond(pending(), h, 5, 2));
  }

  TEST_CASE("subprocess responder round trip") {
    SubprocessResponder r({"/bin/sh", "-c",
                           "while read -r line; do echo '{\"text\":\"hello friend\"}'; done"});
    CHECK(r.available());
    CHECK(r.respond(pending(), histories(1)[0], 0, 0) == "hello friend");
    CHECK(r.respond(pending(), histories(1)[0], 0, 1) == "hello friend");
  }

  TEST_CASE("subprocess failures surface as ResponderUnavailable") {
    SubprocessResponder dead({"/bin/sh", "-c", "exit 0"});
    CHECK(code_of([&] { dead.respond(pending(), histories(1)[0], 0, 0); }) ==
          ErrorCode::ResponderUnavailable);

    SubprocessResponder slow({"/bin/sh", "-c", "sleep 5"}, std::chrono::milliseconds(200));
    CHECK(code_of([&] { slow.respond(pending(), histories(1)[0], 0, 0); }) ==
          ErrorCode::ResponderUnavailable);

    SubprocessResponder missing({"/nonexistent/responder"});
    CHECK_FALSE(missing.available());
  }
}
