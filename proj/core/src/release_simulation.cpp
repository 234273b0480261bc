#include "safeguard/release_simulation.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "safeguard/error.hpp"
#include "safeguard/persona_gate.hpp"
#include "safeguard/responder.hpp"
#include "safeguard/rng.hpp"

namespace safeguard {

namespace {

constexpr std::string_view kUserWords[] = {
    "hi",     "hello",  "how",    "are",   "you",    "today", "tell",  "me",    "about",
    "your",   "day",    "what",   "do",    "like",   "music", "books", "movies", "weather",
    "sunny",  "rain",   "coffee", "tea",   "travel", "city",  "beach", "mountain", "dog",
    "cat",    "friend", "work",   "school", "game",  "story", "funny", "please", "thanks",
    "maybe",  "sure",   "really", "cool"};

std::vector<std::string> user_words(const CompiledLexicon& lexicon) {
  std::vector<std::string> out;
  for (auto w : kUserWords) {
    const TokenStream t = tokenize(w);
    if (!t.empty() && lexicon.match(t).empty()) out.emplace_back(w);
  }
  return out;
}

std::string conversation_id(Date d, std::uint32_t c) {
  std::string day = format_date(d);
  day.erase(std::remove(day.begin(), day.end(), '-'), day.end());
  std::string n = std::to_string(c);
  return "sim-" + day + "-" + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
}

}  // namespace

std::string_view builtin_lexicon_csv() {
  return "# built-in sample lexicon\n"
         "hate you,hate_speech\n"
         "bigot,hate_speech\n"
         "subhuman,hate_speech\n"
         "cut myself,self_harm\n"
         "end it all,self_harm\n"
         "overdose,self_harm\n"
         "nude,sexual\n"
         "explicit,sexual\n"
         "undress,sexual\n"
         "kill,violence\n"
         "stab,violence\n"
         "beat you up,violence\n";
}

SimulationResult simulate_releases(const SimulationConfig& cfg, const CompiledLexicon& lexicon) {
  if (cfg.days < 1) throw Error(ErrorCode::InvalidConfig, "days must be >= 1");
  if (cfg.personas < 1 || cfg.conversations_per_day < 1 || cfg.gate_histories < 1) {
    throw Error(ErrorCode::InvalidConfig, "personas, conversations and histories must be >= 1");
  }
  if (!(cfg.tau_step > 0 && cfg.tau_step < 1) || !(cfg.initial_tau > 0 && cfg.initial_tau <= 1)) {
    throw Error(ErrorCode::InvalidConfig, "tau schedule must start in (0, 1] and shrink");
  }
  if (!(cfg.min_propensity >= 0 && cfg.min_propensity < cfg.max_propensity &&
        cfg.max_propensity <= 1)) {
    throw Error(ErrorCode::InvalidConfig, "propensity range must satisfy 0 <= min < max <= 1");
  }
  if (lexicon.size() == 0) throw Error(ErrorCode::InvalidConfig, "lexicon is empty");

  const auto words = user_words(lexicon);
  if (words.empty()) throw Error(ErrorCode::InvalidConfig, "lexicon covers every filler word");

  // Persona pool, log-uniform propensities.
  struct SimPersona {
    Persona persona;
    std::unique_ptr<StubResponder> responder;
  };
  std::vector<SimPersona> pool;
  const double lo = std::log(std::max(cfg.min_propensity, 1e-6));
  const double hi = std::log(cfg.max_propensity);
  for (std::uint32_t i = 0; i < cfg.personas; ++i) {
    rng::Stream r(rng::combine(rng::combine(cfg.seed, rng::hash_string("propensity")), i));
    const double p = std::exp(lo + r.uniform() * (hi - lo));
    SimPersona sp;
    sp.persona.persona_id = "sim-p" + std::to_string(i);
    sp.persona.name = "Synthetic " + std::to_string(i);
    sp.persona.keywords = {"synthetic"};
    StubProfile profile;
    profile.kind = StubProfile::Kind::Mixed;
    profile.unsafe_probability = p;
    sp.responder = std::make_unique<StubResponder>(profile, lexicon);
    pool.push_back(std::move(sp));
  }

  // Gate histories: short clean user openers.
  std::vector<ConversationHistory> histories;
  for (std::uint32_t h = 0; h < cfg.gate_histories; ++h) {
    rng::Stream r(rng::combine(rng::combine(cfg.seed, rng::hash_string("history")), h));
    std::string text;
    for (std::uint64_t w = 0, n = 3 + r.below(5); w < n; ++w) {
      text += (w ? " " : "") + words[r.below(words.size())];
    }
    histories.push_back({"sim-h" + std::to_string(h), {{Speaker::User, text}}});
  }

  std::vector<Release> releases = cfg.releases;
  std::stable_sort(releases.begin(), releases.end(),
                   [](const Release& a, const Release& b) { return a.date < b.date; });

  SimulationResult result;
  const auto run_epoch = [&](Date start, std::size_t e) {
    SimulationEpoch epoch;
    epoch.start = start;
    epoch.tau = cfg.initial_tau * std::pow(cfg.tau_step, static_cast<double>(e));
    GatePolicy policy;
    policy.histories_per_persona = cfg.gate_histories;
    policy.response_flag_threshold = cfg.theta;
    policy.persona_discard_threshold = epoch.tau;
    policy.seed = rng::combine(cfg.seed, e);
    auto lex = std::shared_ptr<const CompiledLexicon>(&lexicon, [](const CompiledLexicon*) {});
    for (auto& sp : pool) {
      Persona candidate = sp.persona;
      candidate.revision = static_cast<std::uint32_t>(e);
      candidate.status = PersonaStatus::Pending;
      const auto report = moderate_persona(candidate, *sp.responder, histories, policy, lex);
      if (report.decision == PersonaStatus::Approved) {
        epoch.live_personas.push_back(sp.persona.persona_id);
      }
    }
    result.epochs.push_back(std::move(epoch));
  };

  // One epoch before the first release, one more per distinct release date.
  run_epoch(cfg.start, 0);
  std::vector<Date> epoch_dates;
  for (const auto& r : releases) {
    if (epoch_dates.empty() || epoch_dates.back() != r.date) epoch_dates.push_back(r.date);
  }
  for (std::size_t i = 0; i < epoch_dates.size(); ++i) run_epoch(epoch_dates[i], i + 1);

  std::size_t epoch = 0;
  for (int day = 0; day < cfg.days; ++day) {
    const Date d = add_days(cfg.start, day);
    while (epoch + 1 < result.epochs.size() && result.epochs[epoch + 1].start <= d) ++epoch;
    const auto& live = result.epochs[epoch].live_personas;
    const Timestamp midnight{std::chrono::sys_days{d}};
    const std::int64_t slot = 86'400'000 / cfg.conversations_per_day;

    for (std::uint32_t c = 0; c < cfg.conversations_per_day; ++c) {
      rng::Stream r(rng::combine(rng::combine(cfg.seed, static_cast<std::uint64_t>(day)), c));
      const std::string conv = conversation_id(d, c);
      const SimPersona* sp = nullptr;
      if (!live.empty()) {
        const auto& id = live[r.below(live.size())];
        for (const auto& candidate : pool) {
          if (candidate.persona.persona_id == id) sp = &candidate;
        }
      }
      ConversationHistory history{conv, {}};
      Timestamp t = midnight + std::chrono::milliseconds(c * slot);
      const std::uint64_t pairs = 2 + r.below(3);
      for (std::uint64_t turn = 0; turn < pairs; ++turn) {
        std::string text;
        const std::uint64_t n = 4 + r.below(7);
        const std::uint64_t unsafe_at = r.bernoulli(cfg.user_unsafe_rate) ? r.below(n) : n;
        for (std::uint64_t w = 0; w < n; ++w) {
          if (w) text += ' ';
          text += w == unsafe_at ? lexicon.entries()[r.below(lexicon.size())].pattern_text()
                                 : words[r.below(words.size())];
        }
        history.turns.push_back({Speaker::User, text});
        result.corpus.push_back({conv, t, Speaker::User, text});
        t += std::chrono::milliseconds(1000);
        if (!sp) continue;
        const std::string reply = sp->responder->respond(sp->persona, history, cfg.seed,
                                                         static_cast<std::uint32_t>(turn));
        history.turns.push_back({Speaker::Bot, reply});
        result.corpus.push_back({conv, t, Speaker::Bot, reply});
        t += std::chrono::milliseconds(1000);
      }
    }
  }

  auto marked = mark_releases(build_timeseries(result.corpus, lexicon), releases);
  result.series = std::move(marked.series);
  result.warnings = std::move(marked.warnings);
  return result;
}

std::vector<ReleaseEffect> release_effects(const SafetySeries& series,
                                           std::span<const Release> releases, int span_days) {
  std::vector<ReleaseEffect> out;
  for (const auto& r : releases) {
    ReleaseEffect e;
    e.release = r;
    e.before = pooled_ratio_between(series, {add_days(r.date, -span_days), add_days(r.date, -1)});
    e.after = pooled_ratio_between(series, {r.date, add_days(r.date, span_days - 1)});
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace safeguard
