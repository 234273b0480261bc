#include "safeguard/persona_gate.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "safeguard/audit_trace.hpp"
#include "safeguard/error.hpp"

namespace safeguard {

using nlohmann::json;

void GatePolicy::validate() const {
  if (histories_per_persona < 1) throw Error(ErrorCode::InvalidPolicy, "H must be >= 1");
  if (samples_per_history < 1) throw Error(ErrorCode::InvalidPolicy, "k must be >= 1");
  if (!(response_flag_threshold > 0.0 && response_flag_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidPolicy, "theta must be in (0, 1]");
  }
  if (!(persona_discard_threshold > 0.0 && persona_discard_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidPolicy, "tau must be in (0, 1]");
  }
}

json policy_to_json(const GatePolicy& p) {
  return {{"histories_per_persona", p.histories_per_persona},
          {"samples_per_history", p.samples_per_history},
          {"response_flag_threshold", p.response_flag_threshold},
          {"persona_discard_threshold", p.persona_discard_threshold},
          {"seed", p.seed}};
}

GatePolicy policy_from_json(const json& j) {
  GatePolicy p;
  p.histories_per_persona = j.value("histories_per_persona", p.histories_per_persona);
  p.samples_per_history = j.value("samples_per_history", p.samples_per_history);
  p.response_flag_threshold = j.value("response_flag_threshold", p.response_flag_threshold);
  p.persona_discard_threshold = j.value("persona_discard_threshold", p.persona_discard_threshold);
  p.seed = j.value("seed", p.seed);
  return p;
}

std::string_view sample_status_name(SampleStatus s) {
  switch (s) {
    case SampleStatus::Ok: return "ok";
    case SampleStatus::Unavailable: return "unavailable";
    case SampleStatus::Misbehaved: return "misbehaved";
  }
  return "ok";
}

Classification classify_response(std::string_view response, const CompiledLexicon& lexicon,
                                  double theta) {
  const TokenStream tokens = tokenize(response);
  if (tokens.empty()) return {SafetyScore{}, true};
  Classification c;
  c.score = safety_score(tokens, lexicon);
  c.flagged = c.score.ratio >= theta;
  return c;
}

LexiconClassifier::LexiconClassifier(std::shared_ptr<const CompiledLexicon> lexicon,
                                     double threshold)
    : lexicon_(std::move(lexicon)), threshold_(threshold) {
  if (!lexicon_) throw Error(ErrorCode::LexiconMissing, "no lexicon loaded");
}

Classification LexiconClassifier::classify(std::string_view response) const {
  return classify_response(response, *lexicon_, threshold_);
}

std::string LexiconClassifier::id() const { return "lexicon-ratio"; }

std::vector<SampledResponse> sample_responses(Responder& responder, const Persona& persona,
                                              const ConversationHistory& history,
                                              std::uint32_t k, std::uint64_t seed) {
  std::vector<SampledResponse> out(k);
  for (std::uint32_t i = 0; i < k; ++i) {
    auto& s = out[i];
    try {
      s.text = responder.respond(persona, history, seed, i);
      if (s.text.empty()) {
        s.status = SampleStatus::Misbehaved;
        s.error = "empty response";
      }
    } catch (const Error& e) {
      s.status = e.code() == ErrorCode::ResponderMisbehaved ? SampleStatus::Misbehaved
                                                            : SampleStatus::Unavailable;
      s.error = e.what();
    } catch (const std::exception& e) {
      s.status = SampleStatus::Unavailable;
      s.error = e.what();
    }
  }
  return out;
}

json report_to_json(const GateReport& r) {
  json verdicts = json::array();
  for (const auto& v : r.verdicts) {
    json jv = {{"history_id", v.history_id},
               {"history_index", v.history_index},
               {"sample_index", v.sample_index},
               {"response", v.response},
               {"status", sample_status_name(v.status)},
               {"score", score_to_json(v.score)},
               {"flagged", v.flagged}};
    if (v.status != SampleStatus::Ok) jv["error"] = v.error;
    verdicts.push_back(std::move(jv));
  }
  return {{"report_id", r.report_id},
          {"persona_id", r.persona_id},
          {"persona_revision", r.persona_revision},
          {"policy", policy_to_json(r.policy)},
          {"lexicon_version", r.lexicon_version},
          {"classifier", r.classifier},
          {"responder", r.responder},
          {"evaluated", r.verdicts.size()},
          {"flagged_count", r.flagged_count},
          {"flagged_fraction", r.flagged_fraction},
          {"decision", status_name(r.decision)},
          {"verdicts", std::move(verdicts)}};
}

std::string report_to_string(const GateReport& r) {
  return report_to_json(r).dump(2, ' ', false, json::error_handler_t::replace);
}

GateReport moderate_persona(Persona& persona, Responder& responder,
                            std::span<const ConversationHistory> histories,
                            const GatePolicy& policy,
                            std::shared_ptr<const CompiledLexicon> lexicon, AuditTrace* audit,
                            GateOptions options) {
  if (!lexicon) throw Error(ErrorCode::LexiconMissing, "no lexicon loaded");
  policy.validate();
  const LexiconClassifier classifier(lexicon, policy.response_flag_threshold);
  return moderate_persona(persona, responder, histories, policy, classifier,
                          lexicon->version_tag(), audit, options);
}

GateReport moderate_persona(Persona& persona, Responder& responder,
                            std::span<const ConversationHistory> histories,
                            const GatePolicy& policy, const ResponseClassifier& classifier,
                            const std::string& lexicon_version, AuditTrace* audit,
                            GateOptions options) {
  policy.validate();
  const std::uint32_t H = policy.histories_per_persona;
  const std::uint32_t k = policy.samples_per_history;
  if (histories.size() < H) {
    throw Error(ErrorCode::InsufficientHistories,
                "need " + std::to_string(H) + " histories, have " +
                    std::to_string(histories.size()));
  }
  if (persona.status != PersonaStatus::Pending) {
    throw Error(ErrorCode::InvalidTransition,
                persona.persona_id + " is " + std::string(status_name(persona.status)));
  }
  for (std::uint32_t h = 0; h < H; ++h) validate_history(histories[h]);

  GateReport report;
  report.report_id = "gate-" + persona.persona_id + "-r" + std::to_string(persona.revision);
  report.persona_id = persona.persona_id;
  report.persona_revision = persona.revision;
  report.policy = policy;
  report.lexicon_version = lexicon_version;
  report.classifier = classifier.id();
  report.responder = responder.id();
  report.verdicts.resize(static_cast<std::size_t>(H) * k);

  const auto evaluate = [&](std::uint32_t h) {
    const auto samples = sample_responses(responder, persona, histories[h], k, policy.seed);
    for (std::uint32_t i = 0; i < k; ++i) {
      auto& v = report.verdicts[static_cast<std::size_t>(h) * k + i];
      v.history_id = histories[h].history_id;
      v.history_index = h;
      v.sample_index = i;
      v.response = samples[i].text;
      v.status = samples[i].status;
      v.error = samples[i].error;
      if (v.status == SampleStatus::Ok) {
        const auto c = classifier.classify(v.response);
        v.score = c.score;
        v.flagged = c.flagged;
      } else {
        v.flagged = true;  // fail-closed
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, H));
  if (threads == 1) {
    for (std::uint32_t h = 0; h < H; ++h) evaluate(h);
  } else {
    std::atomic<std::uint32_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mu;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        try {
          for (std::uint32_t h = next++; h < H; h = next++) evaluate(h);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (const auto& v : report.verdicts) report.flagged_count += v.flagged ? 1 : 0;
  report.flagged_fraction =
      static_cast<double>(report.flagged_count) / static_cast<double>(report.verdicts.size());
  report.decision = report.flagged_fraction >= policy.persona_discard_threshold
                        ? PersonaStatus::Discarded
                        : PersonaStatus::Approved;

  if (audit) {
    for (const auto& v : report.verdicts) {
      const std::string conv = "gate/" + persona.persona_id + "/r" +
                               std::to_string(persona.revision) + "/" + v.history_id + "/" +
                               std::to_string(v.sample_index);
      for (const auto& turn : histories[v.history_index].turns) {
        audit->append_exchange(conv, persona.persona_id, turn.speaker, turn.text);
      }
      audit->append_exchange(conv, persona.persona_id, Speaker::Bot, v.response);
    }
    audit->append_event("gate_reports", report_to_json(report));
  }
  persona.transition(report.decision);
  return report;
}

std::unique_lock<std::mutex> PersonaLocks::lock(const std::string& persona_id) {
  std::mutex* m;
  {
    std::lock_guard guard(mu_);
    auto& slot = locks_[persona_id];
    if (!slot) slot = std::make_unique<std::mutex>();
    m = slot.get();
  }
  return std::unique_lock<std::mutex>(*m);
}

}  // namespace safeguard
