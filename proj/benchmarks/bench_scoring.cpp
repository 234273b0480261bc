#include <random>
#include <set>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "safeguard/lexicon.hpp"
#include "safeguard/safety_reporting.hpp"
#include "safeguard/safety_score.hpp"
#include "safeguard/tokenizer.hpp"

using namespace safeguard;

namespace {

// Vocabulary of pseudo-words "w0".."w{n-1}"; lexicon terms draw from the same pool.
std::string word(std::size_t i) { return "w" + std::to_string(i); }

CompiledLexicon make_lexicon(std::size_t entries, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LexiconEntry> out;
  std::set<std::vector<std::string>> seen;
  while (out.size() < entries) {
    LexiconEntry e;
    const std::size_t len = 1 + rng() % 3;
    for (std::size_t k = 0; k < len; ++k) e.pattern.push_back(word(rng() % 5000));
    e.category = kAllCategories[rng() % kCategoryCount];
    if (seen.insert(e.pattern).second) out.push_back(std::move(e));
  }
  return CompiledLexicon::compile(std::move(out));
}

std::string make_text(std::size_t words, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::string s;
  s.reserve(words * 6);
  for (std::size_t i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += word(rng() % 5000);
  }
  return s;
}

void BM_Tokenize(benchmark::State& state) {
  const auto text = make_text(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(tokenize(text));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_Tokenize)->Arg(10'000)->Arg(1'000'000);

void BM_Match(benchmark::State& state) {
  const auto lexicon = make_lexicon(static_cast<std::size_t>(state.range(1)), 2);
  const auto stream = tokenize(make_text(static_cast<std::size_t>(state.range(0)), 3));
  for (auto _ : state) benchmark::DoNotOptimize(lexicon.match(stream));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Match)->Args({1'000'000, 50})->Args({1'000'000, 500})->Args({1'000'000, 5000});

void BM_Score(benchmark::State& state) {
  const auto lexicon = make_lexicon(500, 4);
  const auto text = make_text(static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(safety_score(tokenize(text), lexicon));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Score)->Arg(1'000'000);

void BM_Compile(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(make_lexicon(static_cast<std::size_t>(state.range(0)), 6));
}
BENCHMARK(BM_Compile)->Arg(500)->Arg(5000);

void BM_DailySeries(benchmark::State& state) {
  const auto lexicon = make_lexicon(500, 7);
  std::mt19937_64 rng(8);
  std::vector<CorpusRecord> corpus;
  const Timestamp t0{std::chrono::sys_days{parse_date("2022-05-01")}};
  for (int i = 0; i < state.range(0); ++i) {
    corpus.push_back({"c" + std::to_string(i % 2000), t0 + std::chrono::minutes(rng() % (60 * 24 * 30)),
                      i % 2 ? Speaker::Bot : Speaker::User, make_text(50, rng())});
  }
  for (auto _ : state) benchmark::DoNotOptimize(build_timeseries(corpus, lexicon));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 50);
}
BENCHMARK(BM_DailySeries)->Arg(20'000);

}  // namespace

BENCHMARK_MAIN();
