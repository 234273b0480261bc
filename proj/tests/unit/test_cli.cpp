#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "cli_runner.hpp"
#include "safeguard/audit_trace.hpp"
#include "safeguard/persona_gate.hpp"
#include "safeguard/release_simulation.hpp"
#include "safeguard/responder.hpp"
#include "safeguard/safety_reporting.hpp"
#include "temp_dir.hpp"

using namespace safeguard;
using namespace safeguard::testing;
using nlohmann::json;

namespace {

const std::string kCli = SAFEGUARD_CLI_PATH;

constexpr const char* kLexicon = "badx,violence\nvilex,sexual\nhatex,hate_speech\nvery cruelx,hate_speech\n";

CliResult cli(std::vector<std::string> args) { return run_cli(kCli, args); }

std::string words(int n, std::string_view w) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + std::string(w);
  return s;
}

std::vector<CorpusRecord> seeded_corpus(int days, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const std::vector<std::string> fill = {"ok", "hello", "sun", "blue", "tree"};
  const std::vector<std::string> bad = {"badx", "vilex", "hatex", "very cruelx"};
  std::vector<CorpusRecord> out;
  for (int d = 0; d < days; ++d) {
    const Date date = add_days(parse_date("2022-05-01"), d);
    for (int c = 0, n = 1 + static_cast<int>(gen() % 4); c < n; ++c) {
      std::string text;
      for (int i = 0, m = 1 + static_cast<int>(gen() % 30); i < m; ++i) {
        text += (i ? " " : "") + (gen() % 8 == 0 ? bad[gen() % bad.size()] : fill[gen() % fill.size()]);
      }
      out.push_back({"c" + std::to_string(d) + "-" + std::to_string(c),
                     Timestamp{std::chrono::sys_days{date}} + std::chrono::milliseconds(gen() % 86'400'000),
                     gen() % 2 ? Speaker::User : Speaker::Bot, text});
    }
  }
  return out;
}

struct GateFiles {
  TempDir dir;
  std::string persona = (dir / "persona.json").string();
  std::string histories = (dir / "histories.jsonl").string();
  std::string lexicon = (dir / "lexicon.csv").string();

  GateFiles() {
    spit(persona, R"({"persona_id":"p1","name":"Ada","keywords":["kind"]})");
    std::string h;
    for (int i = 0; i < 100; ++i) {
      h += json{{"history_id", "h" + std::to_string(i)},
                {"turns", json::array({{{"speaker", "user"}, {"text", "hello number " + std::to_string(i)}}})}}
               .dump() +
           "\n";
    }
    spit(histories, h);
    spit(lexicon, kLexicon);
  }

  std::vector<std::string> args(const std::string& profile, const std::string& seed = "0") const {
    return {"gate", "--persona", persona, "--histories", histories, "--lexicon", lexicon,
            "--stub-profile", profile, "--seed", seed};
  }
};

}  // namespace

TEST_SUITE("cli score") {
  TEST_CASE("one day, 100 tokens, 5 planted gives ratio 0.05") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    const std::string text = words(95, "ok") + " " + words(5, "badx");
    spit(t / "c.jsonl", corpus_to_jsonl(std::vector<CorpusRecord>{
                            {"c1", parse_rfc3339("2022-06-01T10:00:00Z"), Speaker::Bot, text}}));
    const auto r = cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string()});
    REQUIRE(r.exit_code == 0);
    const auto j = json::parse(r.out);
    REQUIRE(j["series"].size() == 1);
    CHECK(j["series"][0]["ratio"].get<double>() == 0.05);
    CHECK(j["series"][0]["total_words"] == 100);
    CHECK(j["series"][0]["matched_words"] == 5);
  }

  TEST_CASE("empty corpus is an empty series and exit 0") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    spit(t / "c.jsonl", "");
    const auto csv = cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string(),
                          "--format", "csv"});
    CHECK(csv.exit_code == 0);
    CHECK(csv.out == std::string(kReportCsvHeader) + "\n");
    const auto js = cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string()});
    CHECK(js.exit_code == 0);
    CHECK(json::parse(js.out)["series"].empty());
  }

  TEST_CASE("30-day seeded corpus is byte-identical to the library export") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    const auto corpus = seeded_corpus(30, 99);
    spit(t / "c.jsonl", corpus_to_jsonl(corpus));
    const auto lex = load_lexicon(kLexicon);
    for (const auto speaker : {SpeakerFilter::Both, SpeakerFilter::User, SpeakerFilter::Bot}) {
      const auto series = build_timeseries(corpus, lex, speaker);
      for (const auto format : {ReportFormat::Csv, ReportFormat::Json}) {
        const auto r = cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string(),
                            "--speaker", std::string(speaker_filter_name(speaker)), "--format",
                            format == ReportFormat::Csv ? "csv" : "json"});
        CHECK(r.exit_code == 0);
        CHECK(r.out == export_report(series, format));
      }
    }
  }

  TEST_CASE("date range and release markers match the library") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    spit(t / "rel.csv", "date,label\n2022-05-10,v2\n2022-07-01,outside\n");
    const auto corpus = seeded_corpus(30, 5);
    spit(t / "c.jsonl", corpus_to_jsonl(corpus));
    const auto lex = load_lexicon(kLexicon);
    const DateRange range{parse_date("2022-05-05"), parse_date("2022-05-20")};
    auto marked = mark_releases(build_timeseries(corpus, lex, SpeakerFilter::Both, range),
                                parse_releases("2022-05-10,v2\n2022-07-01,outside\n"));
    const auto r = cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string(),
                        "--from", "2022-05-05", "--to", "2022-05-20", "--releases", (t / "rel.csv").string(),
                        "--format", "csv"});
    CHECK(r.exit_code == 0);
    CHECK(r.out == export_report(marked.series, ReportFormat::Csv));
  }
}

TEST_SUITE("cli exit codes") {
  TEST_CASE("usage errors exit 2") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    spit(t / "c.jsonl", "");
    const std::string c = (t / "c.jsonl").string();
    const std::string l = (t / "lex.csv").string();
    CHECK(cli({}).exit_code == 2);
    CHECK(cli({"no-such-command"}).exit_code == 2);
    CHECK(cli({"score", "--lexicon", l}).exit_code == 2);
    CHECK(cli({"score", "--corpus", (t / "missing.jsonl").string(), "--lexicon", l}).exit_code == 2);
    CHECK(cli({"score", "--corpus", c, "--lexicon", l, "--speaker", "robot"}).exit_code == 2);
    CHECK(cli({"score", "--corpus", c, "--lexicon", l, "--format", "xml"}).exit_code == 2);
    CHECK(cli({"score", "--corpus", c, "--lexicon", l, "--from", "2022-13-01"}).exit_code == 2);
    CHECK(cli({"score", "--corpus", c, "--lexicon", l, "--from", "2022-05-02", "--to", "2022-05-01"}).exit_code == 2);
    CHECK(cli({"simulate-releases", "--days", "0"}).exit_code == 2);
    CHECK(cli({"simulate-releases", "--days", "ten"}).exit_code == 2);
    CHECK(cli({"report", "--corpus", c, "--alerts", "--factor", "1"}).exit_code == 2);
    CHECK(cli({"report"}).exit_code == 2);
    CHECK(cli({"--help"}).exit_code == 0);
  }

  TEST_CASE("malformed inputs exit 3") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    spit(t / "badlex.csv", "badx,violence\nnot a line\n");
    spit(t / "c.jsonl", "{\"conversation_id\":\"c\",\"timestamp\":\"2022-01-01T00:00:00Z\",\"speaker\":\"bot\",\"text\":\"ok\"}\n{oops\n");
    spit(t / "good.jsonl", "");
    spit(t / "rel.csv", "2022-02-30,bad date\n");
    const std::string l = (t / "lex.csv").string();
    CHECK(cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", l}).exit_code == 3);
    CHECK(cli({"score", "--corpus", (t / "good.jsonl").string(), "--lexicon", (t / "badlex.csv").string()}).exit_code == 3);
    CHECK(cli({"score", "--corpus", (t / "good.jsonl").string(), "--lexicon", l, "--releases", (t / "rel.csv").string()}).exit_code == 3);
  }

  TEST_CASE("gate exit codes") {
    GateFiles f;
    auto bad_histories = f.args("clean");
    spit(f.dir / "few.jsonl", "{\"history_id\":\"h\",\"turns\":[{\"speaker\":\"user\",\"text\":\"hi\"}]}\n");
    bad_histories[4] = (f.dir / "few.jsonl").string();
    CHECK(cli(bad_histories).exit_code == 3);  // fewer histories than H
    auto bad_profile = f.args("sometimes");
    CHECK(cli(bad_profile).exit_code == 2);
    auto bad_tau = f.args("clean");
    bad_tau.insert(bad_tau.end(), {"--tau", "1.5"});
    CHECK(cli(bad_tau).exit_code == 2);
    auto dead = f.args("clean");
    dead.resize(7);
    dead.insert(dead.end(), {"--responder-cmd", "/nonexistent/responder"});
    CHECK(cli(dead).exit_code == 1);  // every sample unavailable: flagged, so discarded
  }

  TEST_CASE("lexicon check") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    spit(t / "bad.csv", "badx,violence\nbadx,violence\n");
    const auto ok = cli({"lexicon", "check", (t / "lex.csv").string()});
    CHECK(ok.exit_code == 0);
    CHECK(json::parse(ok.out)["entries"] == 4);
    CHECK(json::parse(ok.out)["version"] == load_lexicon(kLexicon).version_tag());
    const auto bad = cli({"lexicon", "check", (t / "bad.csv").string()});
    CHECK(bad.exit_code == 1);
    CHECK(json::parse(bad.out)["error"] == "DuplicateEntry");
  }
}

TEST_SUITE("cli gate") {
  TEST_CASE("clean stub approves, nsfw stub discards") {
    GateFiles f;
    const auto clean = cli(f.args("clean"));
    CHECK(clean.exit_code == 0);
    CHECK(json::parse(clean.out)["decision"] == "approved");
    const auto nsfw = cli(f.args("nsfw"));
    CHECK(nsfw.exit_code == 1);
    CHECK(json::parse(nsfw.out)["decision"] == "discarded");
  }

  TEST_CASE("mixed:0.1 seed 7 is identical across runs and equals the library report") {
    GateFiles f;
    const auto a = cli(f.args("mixed:0.1", "7"));
    auto threaded = f.args("mixed:0.1", "7");
    threaded.insert(threaded.end(), {"--threads", "4"});
    const auto b = cli(threaded);
    CHECK(a.out == b.out);
    CHECK(a.exit_code == b.exit_code);

    auto lexicon = std::make_shared<const CompiledLexicon>(load_lexicon(kLexicon));
    auto persona = load_persona_file(f.persona);
    const auto histories = load_histories_file(f.histories);
    GatePolicy policy;
    policy.seed = 7;
    StubResponder stub(StubProfile::parse("mixed:0.1"), *lexicon);
    const auto report = moderate_persona(persona, stub, histories, policy, lexicon);
    CHECK(a.out == report_to_string(report) + "\n");
    CHECK(a.exit_code == (report.decision == PersonaStatus::Approved ? 0 : 1));
  }

  TEST_CASE("subprocess responder-stub gives the in-process verdicts") {
    GateFiles f;
    const auto inproc = json::parse(cli(f.args("mixed:0.2", "3")).out);
    auto args = f.args("mixed:0.2", "3");
    args.resize(7);
    args.insert(args.end(), {"--seed", "3", "--responder-cmd",
                             kCli + " responder-stub --profile mixed:0.2 --lexicon " + f.lexicon});
    const auto sub = cli(args);
    REQUIRE(!sub.out.empty());
    const auto j = json::parse(sub.out);
    CHECK(j["verdicts"] == inproc["verdicts"]);
    CHECK(j["flagged_fraction"] == inproc["flagged_fraction"]);
  }

  TEST_CASE("--audit-dir logs every replay") {
    GateFiles f;
    auto args = f.args("clean");
    args.insert(args.end(), {"--audit-dir", (f.dir / "audit").string()});
    REQUIRE(cli(args).exit_code == 0);
    AuditTrace audit({.directory = f.dir / "audit", .fsync = false});
    CHECK(audit.events("gate_reports").size() == 1);
    CHECK(audit.get_trace(TraceSelector::persona("p1")).size() == 200);  // 1 user turn + 1 reply per history
  }
}

TEST_SUITE("cli simulate-releases") {
  TEST_CASE("same seed twice gives byte-identical CSV equal to the library") {
    TempDir t;
    spit(t / "rel.csv", "2022-05-26,r1\n2022-06-20,r2\n2022-07-15,r3\n");
    const auto a = cli({"simulate-releases", "--days", "90", "--releases", (t / "rel.csv").string(), "--seed", "1"});
    const auto b = cli({"simulate-releases", "--days", "90", "--releases", (t / "rel.csv").string(), "--seed", "1",
                        "--out", (t / "b.csv").string()});
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    CHECK(a.out == slurp(t / "b.csv"));

    SimulationConfig cfg;
    cfg.releases = parse_releases("2022-05-26,r1\n2022-06-20,r2\n2022-07-15,r3\n");
    const auto lib = simulate_releases(cfg, load_lexicon(builtin_lexicon_csv()));
    CHECK(a.out == export_report(lib.series, ReportFormat::Csv));
    CHECK(parse_report(a.out, ReportFormat::Csv).size() == 90);
  }

  TEST_CASE("no releases: plain series, no markers") {
    const auto r = cli({"simulate-releases", "--days", "20", "--seed", "4"});
    REQUIRE(r.exit_code == 0);
    const auto s = parse_report(r.out, ReportFormat::Csv);
    CHECK(s.size() == 20);
    for (const auto& p : s) CHECK_FALSE(p.release_marker.has_value());
  }

  TEST_CASE("emitted corpus rescored by `score` reproduces the series") {
    TempDir t;
    const auto sim = cli({"simulate-releases", "--days", "15", "--corpus-out", (t / "c.jsonl").string()});
    REQUIRE(sim.exit_code == 0);
    spit(t / "lex.csv", std::string(builtin_lexicon_csv()));
    const auto score = cli({"score", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string(),
                            "--format", "csv"});
    CHECK(score.out == sim.out);
  }
}

TEST_SUITE("cli audit readers") {
  void seed_log(const std::filesystem::path& dir) {
    AuditTrace audit({.directory = dir, .fsync = false});
    audit.append_exchange("c1", "p1", Speaker::User, "hello there", parse_rfc3339("2022-06-01T09:00:00Z"));
    audit.append_exchange("c1", "p1", Speaker::Bot, "badx badx ok", parse_rfc3339("2022-06-01T09:00:01Z"));
    audit.append_exchange("c2", "p1", Speaker::User, "ok ok", parse_rfc3339("2022-06-02T09:00:00Z"));
    audit.append_exchange("gate/p1/r0/h0/0", "p1", Speaker::Bot, "vilex", parse_rfc3339("2022-06-02T09:00:00Z"));
    audit.record_rating("c1", 1, 1, "less violent please");
  }

  TEST_CASE("report --log-dir matches the library and leaves the directory untouched") {
    TempDir t;
    seed_log(t / "log");
    spit(t / "lex.csv", kLexicon);
    // A torn trailing line the gateway would repair on startup.
    const auto seg = t / "log" / "exchanges-2022-06-02.jsonl";
    spit(seg, slurp(seg) + "{\"torn");
    const auto before = slurp(seg);

    const auto r = cli({"report", "--log-dir", (t / "log").string(), "--lexicon", (t / "lex.csv").string(),
                        "--format", "csv"});
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(seg) == before);

    const auto lex = load_lexicon(kLexicon);
    std::vector<CorpusRecord> corpus = {
        {"c1", parse_rfc3339("2022-06-01T09:00:00Z"), Speaker::User, "hello there"},
        {"c1", parse_rfc3339("2022-06-01T09:00:01Z"), Speaker::Bot, "badx badx ok"},
        {"c2", parse_rfc3339("2022-06-02T09:00:00Z"), Speaker::User, "ok ok"}};
    CHECK(r.out == export_report(build_timeseries(corpus, lex), ReportFormat::Csv));

    const auto with_gate = cli({"report", "--log-dir", (t / "log").string(), "--lexicon",
                                (t / "lex.csv").string(), "--include-gate"});
    const auto j = json::parse(with_gate.out);
    CHECK(j["series"][1]["matched_words"] == 1);
  }

  TEST_CASE("report --alerts") {
    TempDir t;
    spit(t / "lex.csv", kLexicon);
    std::vector<CorpusRecord> corpus;
    for (int d = 0; d < 10; ++d) {
      const auto ts = Timestamp{std::chrono::sys_days{add_days(parse_date("2022-05-01"), d)}};
      corpus.push_back({"c" + std::to_string(d), ts, Speaker::Bot, words(99, "ok") + (d == 8 ? " badx badx badx" : " badx")});
    }
    spit(t / "c.jsonl", corpus_to_jsonl(corpus));
    const auto r = cli({"report", "--corpus", (t / "c.jsonl").string(), "--lexicon", (t / "lex.csv").string(),
                        "--alerts", "--window", "3"});
    REQUIRE(r.exit_code == 0);
    const auto j = json::parse(r.out);
    REQUIRE(j["alerts"].size() == 1);
    CHECK(j["alerts"][0]["date"] == "2022-05-09");
    CHECK(j["window"] == 3);
  }

  TEST_CASE("export-ratings writes RatingRecord JSONL") {
    TempDir t;
    seed_log(t / "log");
    const auto r = cli({"export-ratings", "--log-dir", (t / "log").string()});
    REQUIRE(r.exit_code == 0);
    AuditTrace audit({.directory = t / "log", .fsync = false});
    std::string expected;
    for (const auto& rec : audit.ratings()) expected += json(rec).dump() + "\n";
    CHECK(r.out == expected);
    CHECK(json::parse(r.out)["suggestion"] == "less violent please");
    const auto none = cli({"export-ratings", "--log-dir", (t / "log").string(), "--from", "2000-01-01", "--to", "2000-01-02"});
    CHECK(none.exit_code == 0);
    CHECK(none.out.empty());
  }
}
