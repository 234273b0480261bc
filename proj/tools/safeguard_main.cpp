#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "safeguard/audit_trace.hpp"
#include "safeguard/error.hpp"
#include "safeguard/gateway.hpp"
#include "safeguard/lexicon.hpp"
#include "safeguard/persona.hpp"
#include "safeguard/persona_gate.hpp"
#include "safeguard/release_simulation.hpp"
#include "safeguard/responder.hpp"
#include "safeguard/safety_reporting.hpp"
#include "safeguard/service_config.hpp"

namespace sg = safeguard;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kRejected = 1, kUsage = 2, kRuntime = 3 };

// A flag value the library refused. Reported as a usage error.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename F>
auto flag_value(const std::string& flag, F&& parse) {
  try {
    return parse();
  } catch (const sg::Error& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

void write_output(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
  if (!f) throw sg::Error(sg::ErrorCode::IoError, "cannot write " + out_path);
  f << text;
  f.flush();
  if (!f) throw sg::Error(sg::ErrorCode::IoError, "write failed: " + out_path);
}

std::optional<sg::DateRange> date_range(const std::string& from, const std::string& to) {
  if (from.empty() && to.empty()) return std::nullopt;
  using namespace std::chrono;
  sg::DateRange r{from.empty() ? sg::Date{year{1970}, month{1}, day{1}}
                               : flag_value("--from", [&] { return sg::parse_date(from); }),
                  to.empty() ? sg::Date{year{9999}, month{12}, day{31}}
                             : flag_value("--to", [&] { return sg::parse_date(to); })};
  if (r.to < r.from) throw UsageError("--from is after --to");
  return r;
}

sg::CompiledLexicon lexicon_or_builtin(const std::string& path) {
  return path.empty() ? sg::load_lexicon(sg::builtin_lexicon_csv()) : sg::load_lexicon_file(path);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

bool is_gate_conversation(const std::string& id) { return id.rfind("gate/", 0) == 0; }

// Corpus from an audit directory, opened without repairing or writing.
std::vector<sg::CorpusRecord> corpus_from_log_dir(const std::string& dir, bool include_gate) {
  sg::AuditTrace audit({.directory = dir, .fsync = false, .read_only = true});
  std::vector<sg::ExchangeRecord> kept;
  for (auto& e : audit.all_exchanges()) {
    if (include_gate || !is_gate_conversation(e.conversation_id)) kept.push_back(std::move(e));
  }
  return sg::corpus_from_exchanges(kept);
}

struct ScoreArgs {
  std::string corpus, lexicon, speaker = "both", format = "json", from, to, releases, out;
};

struct ReportArgs {
  std::string log_dir, corpus, lexicon, speaker = "both", format = "json", from, to, releases, out;
  bool include_gate = false;
  bool alerts = false;
  int window = 7;
  double factor = 1.5;
};

struct GateArgs {
  std::string persona, histories, lexicon, stub_profile = "clean", responder_cmd, audit_dir;
  std::uint64_t seed = 0;
  double theta = 0.05;
  double tau = 0.01;
  std::uint32_t histories_per_persona = 100;
  std::uint32_t samples = 1;
  unsigned threads = 1;
};

struct SimulateArgs {
  int days = 90;
  std::string releases, start = "2022-05-05", out, lexicon, corpus_out, format = "csv";
  std::uint64_t seed = 1;
};

struct ExportArgs {
  std::string log_dir, from, to, out;
};

int run_score(const ScoreArgs& a) {
  const auto speakers = flag_value("--speaker", [&] { return sg::parse_speaker_filter(a.speaker); });
  const auto format = flag_value("--format", [&] { return sg::parse_report_format(a.format); });
  const auto range = date_range(a.from, a.to);
  const auto lexicon = sg::load_lexicon_file(a.lexicon);
  const auto corpus = sg::load_corpus_file(a.corpus);
  auto series = sg::build_timeseries(corpus, lexicon, speakers, range);
  if (!a.releases.empty()) {
    auto marked = sg::mark_releases(std::move(series), sg::load_releases_file(a.releases));
    print_warnings(marked.warnings);
    series = std::move(marked.series);
  }
  write_output(sg::export_report(series, format), a.out);
  return kOk;
}

int run_report(const ReportArgs& a) {
  const auto speakers = flag_value("--speaker", [&] { return sg::parse_speaker_filter(a.speaker); });
  const auto format = flag_value("--format", [&] { return sg::parse_report_format(a.format); });
  const auto range = date_range(a.from, a.to);
  if (a.alerts && (a.window < 1 || !(a.factor > 1.0))) {
    throw UsageError("--window must be >= 1 and --factor > 1");
  }
  const auto lexicon = lexicon_or_builtin(a.lexicon);
  const auto corpus =
      a.corpus.empty() ? corpus_from_log_dir(a.log_dir, a.include_gate) : sg::load_corpus_file(a.corpus);
  auto series = sg::build_timeseries(corpus, lexicon, speakers, range);
  if (!a.releases.empty()) {
    auto marked = sg::mark_releases(std::move(series), sg::load_releases_file(a.releases));
    print_warnings(marked.warnings);
    series = std::move(marked.series);
  }
  if (!a.alerts) {
    write_output(sg::export_report(series, format), a.out);
    return kOk;
  }
  const auto alerts = sg::detect_regressions(series, a.window, a.factor);
  const json body{{"window", a.window}, {"alert_factor", a.factor}, {"alerts", sg::alerts_to_json(alerts)}};
  write_output(body.dump(2) + "\n", a.out);
  return kOk;
}

int run_gate(const GateArgs& a) {
  sg::GatePolicy policy;
  policy.histories_per_persona = a.histories_per_persona;
  policy.samples_per_history = a.samples;
  policy.response_flag_threshold = a.theta;
  policy.persona_discard_threshold = a.tau;
  policy.seed = a.seed;
  flag_value("policy", [&] { policy.validate(); return 0; });
  std::optional<sg::StubProfile> profile;
  if (a.responder_cmd.empty()) {
    profile = flag_value("--stub-profile", [&] { return sg::StubProfile::parse(a.stub_profile); });
  }

  auto lexicon = std::make_shared<const sg::CompiledLexicon>(sg::load_lexicon_file(a.lexicon));
  auto persona = sg::load_persona_file(a.persona);
  const auto histories = sg::load_histories_file(a.histories);

  std::unique_ptr<sg::Responder> responder;
  if (profile) {
    responder = std::make_unique<sg::StubResponder>(*profile, *lexicon);
  } else {
    responder = sg::make_responder("subprocess:" + a.responder_cmd, *lexicon);
  }

  std::unique_ptr<sg::AuditTrace> audit;
  if (!a.audit_dir.empty()) audit = std::make_unique<sg::AuditTrace>(sg::AuditTrace::Options{.directory = a.audit_dir});

  const auto report = sg::moderate_persona(persona, *responder, histories, policy, lexicon, audit.get(),
                                           {.threads = a.threads});
  std::cout << sg::report_to_string(report) << '\n' << std::flush;
  return report.decision == sg::PersonaStatus::Approved ? kOk : kRejected;
}

int run_simulate(const SimulateArgs& a) {
  if (a.days < 1) throw UsageError("--days must be >= 1");
  const auto format = flag_value("--format", [&] { return sg::parse_report_format(a.format); });
  sg::SimulationConfig cfg;
  cfg.days = a.days;
  cfg.seed = a.seed;
  cfg.start = flag_value("--start", [&] { return sg::parse_date(a.start); });
  if (!a.releases.empty()) cfg.releases = sg::load_releases_file(a.releases);
  const auto lexicon = lexicon_or_builtin(a.lexicon);
  const auto result = flag_value("simulation", [&] { return sg::simulate_releases(cfg, lexicon); });
  print_warnings(result.warnings);
  write_output(sg::export_report(result.series, format), a.out);
  if (!a.corpus_out.empty()) write_output(sg::corpus_to_jsonl(result.corpus), a.corpus_out);

  for (const auto& e : sg::release_effects(result.series, cfg.releases)) {
    const auto show = [](const std::optional<double>& v) { return v ? sg::format_double(*v) : std::string("n/a"); };
    std::cerr << sg::format_date(e.release.date) << ' ' << e.release.label << ": before=" << show(e.before)
              << " after=" << show(e.after) << (e.improved() ? " improved" : " not improved") << '\n';
  }
  return kOk;
}

int run_export_ratings(const ExportArgs& a) {
  const auto range = date_range(a.from, a.to);
  sg::AuditTrace audit({.directory = a.log_dir, .fsync = false, .read_only = true});
  std::string out;
  for (const auto& r : audit.ratings(range)) out += json(r).dump() + "\n";
  write_output(out, a.out);
  return kOk;
}

int run_lexicon_check(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw sg::Error(sg::ErrorCode::IoError, "cannot read " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  std::optional<sg::CompiledLexicon> lexicon;
  try {
    lexicon = sg::load_lexicon(buf.str());
  } catch (const sg::Error& e) {
    std::cout << json{{"valid", false}, {"error", sg::to_string(e.code())}, {"detail", e.detail()}}.dump(2)
              << '\n';
    return kRejected;
  }
  json categories = json::object();
  for (auto c : sg::kAllCategories) categories[std::string(sg::category_name(c))] = 0;
  for (const auto& e : lexicon->entries()) {
    categories[std::string(sg::category_name(e.category))] =
        categories[std::string(sg::category_name(e.category))].get<int>() + 1;
  }
  std::cout << json{{"valid", true},
                    {"entries", lexicon->size()},
                    {"version", lexicon->version_tag()},
                    {"categories", categories}}
                   .dump(2)
            << '\n';
  return kOk;
}

int run_responder_stub(const std::string& profile_text, const std::string& lexicon_path) {
  const auto profile = flag_value("--profile", [&] { return sg::StubProfile::parse(profile_text); });
  const auto lexicon = lexicon_or_builtin(lexicon_path);
  sg::StubResponder responder(profile, lexicon);
  sg::serve_responder(responder, STDIN_FILENO, STDOUT_FILENO);
  return kOk;
}

int run_serve(const std::string& config_path) {
  const auto config = sg::load_service_config(config_path);

  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  sg::Gateway gateway(sg::load_gateway_deps(config));
  const int port = gateway.start(config.host, config.port);
  std::cerr << "safeguard gateway listening on " << config.host << ':' << port << '\n';

  int sig = 0;
  sigwait(&stop_signals, &sig);
  std::cerr << "signal " << sig << ", shutting down\n";
  gateway.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moderation gateway tooling: scoring, gating, reporting and the HTTP service."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "safeguard 0.1.0");

  int code = kOk;
  const auto guard = [&code](auto&& fn) {
    return [&code, fn = std::forward<decltype(fn)>(fn)] { code = fn(); };
  };

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Daily NSFW word ratio of a corpus");
  score_cmd->add_option("--corpus", score.corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--lexicon", score.lexicon, "Lexicon CSV")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--speaker", score.speaker, "both|user|bot")->capture_default_str();
  score_cmd->add_option("--format", score.format, "json|csv")->capture_default_str();
  score_cmd->add_option("--from", score.from, "First day, YYYY-MM-DD");
  score_cmd->add_option("--to", score.to, "Last day, YYYY-MM-DD");
  score_cmd->add_option("--releases", score.releases, "Release CSV to mark")->check(CLI::ExistingFile);
  score_cmd->add_option("--out", score.out, "Output file (default stdout)");
  score_cmd->callback(guard([&] { return run_score(score); }));

  GateArgs gate;
  auto* gate_cmd = app.add_subcommand("gate", "Run the persona gate against a responder");
  gate_cmd->add_option("--persona", gate.persona, "Persona JSON")->required()->check(CLI::ExistingFile);
  gate_cmd->add_option("--histories", gate.histories, "Histories JSONL")->required()->check(CLI::ExistingFile);
  gate_cmd->add_option("--lexicon", gate.lexicon, "Lexicon CSV")->required()->check(CLI::ExistingFile);
  gate_cmd->add_option("--seed", gate.seed)->capture_default_str();
  gate_cmd->add_option("--theta", gate.theta, "Response flag threshold")->capture_default_str();
  gate_cmd->add_option("--tau", gate.tau, "Persona discard threshold")->capture_default_str();
  gate_cmd->add_option("-H,--histories-per-persona", gate.histories_per_persona)->capture_default_str();
  gate_cmd->add_option("-k,--samples", gate.samples, "Samples per history")->capture_default_str();
  auto* stub_opt = gate_cmd->add_option("--stub-profile", gate.stub_profile, "clean|nsfw|mixed:<p>")
                       ->capture_default_str();
  gate_cmd->add_option("--responder-cmd", gate.responder_cmd, "Command line of a subprocess responder")
      ->excludes(stub_opt);
  gate_cmd->add_option("--audit-dir", gate.audit_dir, "Log the gate replays here");
  gate_cmd->add_option("--threads", gate.threads)->capture_default_str()->check(CLI::Range(1u, 256u));
  gate_cmd->callback(guard([&] { return run_gate(gate); }));

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Daily series and regression alerts");
  auto* log_opt = report_cmd->add_option("--log-dir", report.log_dir, "Audit directory")->check(CLI::ExistingDirectory);
  auto* corpus_opt = report_cmd->add_option("--corpus", report.corpus, "Corpus JSONL")->check(CLI::ExistingFile);
  log_opt->excludes(corpus_opt);
  report_cmd->add_option("--lexicon", report.lexicon, "Lexicon CSV (default: built-in)")->check(CLI::ExistingFile);
  report_cmd->add_option("--speaker", report.speaker)->capture_default_str();
  report_cmd->add_option("--format", report.format)->capture_default_str();
  report_cmd->add_option("--from", report.from);
  report_cmd->add_option("--to", report.to);
  report_cmd->add_option("--releases", report.releases)->check(CLI::ExistingFile);
  report_cmd->add_flag("--include-gate", report.include_gate, "Keep gate replay conversations");
  report_cmd->add_flag("--alerts", report.alerts, "Print regression alerts instead of the series");
  report_cmd->add_option("--window", report.window)->capture_default_str();
  report_cmd->add_option("--factor", report.factor)->capture_default_str();
  report_cmd->add_option("--out", report.out);
  report_cmd->callback(guard([&] {
    if (report.log_dir.empty() == report.corpus.empty()) throw UsageError("give exactly one of --log-dir, --corpus");
    return run_report(report);
  }));

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate-releases", "Synthetic daily series with release steps");
  sim_cmd->add_option("--days", sim.days)->capture_default_str();
  sim_cmd->add_option("--releases", sim.releases, "Release CSV")->check(CLI::ExistingFile);
  sim_cmd->add_option("--seed", sim.seed)->capture_default_str();
  sim_cmd->add_option("--start", sim.start)->capture_default_str();
  sim_cmd->add_option("--lexicon", sim.lexicon, "Lexicon CSV (default: built-in)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--format", sim.format)->capture_default_str();
  sim_cmd->add_option("--out", sim.out, "Series output (default stdout)");
  sim_cmd->add_option("--corpus-out", sim.corpus_out, "Write the synthetic corpus JSONL");
  sim_cmd->callback(guard([&] { return run_simulate(sim); }));

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-ratings", "Ratings JSONL from an audit directory");
  exp_cmd->add_option("--log-dir", exp.log_dir)->required()->check(CLI::ExistingDirectory);
  exp_cmd->add_option("--from", exp.from);
  exp_cmd->add_option("--to", exp.to);
  exp_cmd->add_option("--out", exp.out);
  exp_cmd->callback(guard([&] { return run_export_ratings(exp); }));

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP gateway");
  serve_cmd->add_option("--config", config_path, "Service config")->required()->check(CLI::ExistingFile);
  serve_cmd->callback(guard([&] { return run_serve(config_path); }));

  std::string lexicon_path;
  auto* lexicon_cmd = app.add_subcommand("lexicon", "Lexicon utilities");
  lexicon_cmd->require_subcommand(1);
  auto* check_cmd = lexicon_cmd->add_subcommand("check", "Validate a lexicon file");
  check_cmd->add_option("path", lexicon_path, "Lexicon CSV")->required()->check(CLI::ExistingFile);
  check_cmd->callback(guard([&] { return run_lexicon_check(lexicon_path); }));

  std::string stub_profile = "clean";
  std::string stub_lexicon;
  auto* stub_cmd = app.add_subcommand("responder-stub", "Serve the seeded stub over stdin/stdout");
  stub_cmd->add_option("--profile", stub_profile)->capture_default_str();
  stub_cmd->add_option("--lexicon", stub_lexicon)->check(CLI::ExistingFile);
  stub_cmd->callback(guard([&] { return run_responder_stub(stub_profile, stub_lexicon); }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const sg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return code;
}
