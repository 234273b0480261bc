#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "safeguard/lexicon.hpp"
#include "safeguard/safety_reporting.hpp"

namespace safeguard {

/// Synthetic traffic for the daily ratio series. A pool of personas with
/// seeded unsafe-reply propensities goes through the real persona gate once
/// per policy epoch; each release starts a new epoch with a tighter tau, so
/// fewer high-propensity personas stay live. Daily conversations are drawn
/// from the live set and scored with build_timeseries.
struct SimulationConfig {
  int days = 90;
  Date start{std::chrono::year{2022}, std::chrono::month{5}, std::chrono::day{5}};
  std::vector<Release> releases;
  std::uint64_t seed = 1;
  std::uint32_t personas = 40;
  std::uint32_t conversations_per_day = 80;
  std::uint32_t gate_histories = 50;
  double theta = 0.05;
  /// tau for epoch e is initial_tau * tau_step^e.
  double initial_tau = 0.5;
  double tau_step = 0.4;
  double min_propensity = 0.002;
  double max_propensity = 0.6;
  double user_unsafe_rate = 0.01;
};

struct SimulationEpoch {
  Date start;
  double tau = 0.0;
  std::vector<std::string> live_personas;
};

struct SimulationResult {
  std::vector<CorpusRecord> corpus;
  SafetySeries series;  // release markers applied
  std::vector<SimulationEpoch> epochs;
  std::vector<std::string> warnings;
};

/// Deterministic in (config, lexicon). Throws Error{InvalidConfig}.
SimulationResult simulate_releases(const SimulationConfig& config, const CompiledLexicon& lexicon);

/// Small built-in lexicon used when no lexicon file is given.
std::string_view builtin_lexicon_csv();

/// Pooled ratio over the 7 days before a release and the 7 days from the
/// release day on, both computed from the series.
struct ReleaseEffect {
  Release release;
  std::optional<double> before;
  std::optional<double> after;
  bool improved() const { return before && after && *after < *before; }
};
std::vector<ReleaseEffect> release_effects(const SafetySeries& series,
                                           std::span<const Release> releases, int span_days = 7);

}  // namespace safeguard
