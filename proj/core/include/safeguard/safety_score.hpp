#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include <nlohmann/json.hpp>

#include "safeguard/lexicon.hpp"
#include "safeguard/tokenizer.hpp"

namespace safeguard {

using CategoryCounts = std::array<std::uint64_t, kCategoryCount>;

/// NSFW word ratio over a token corpus: ratio = matched_words / total_words.
///
/// matched_words counts distinct token positions covered by at least one
/// match. per_category counts positions per category, so a position hit by
/// two categories counts once in matched_words and once in each category.
struct SafetyScore {
  std::uint64_t total_words = 0;
  std::uint64_t matched_words = 0;
  CategoryCounts per_category{};
  double ratio = 0.0;

  std::uint64_t category(Category c) const { return per_category[static_cast<std::size_t>(c)]; }

  friend bool operator==(const SafetyScore&, const SafetyScore&) = default;
};

/// Throws Error{EmptyCorpus} when the stream has no tokens.
SafetyScore safety_score(const TokenStream& stream, const CompiledLexicon& lexicon);

/// Same as safety_score() for matches already computed on a stream of
/// `total_words` tokens.
SafetyScore score_from_matches(std::size_t total_words, std::span<const Match> matches,
                               const CompiledLexicon& lexicon);

/// Word-pooled merge (not a mean of ratios). Throws Error{EmptyList}.
SafetyScore merge_scores(std::span<const SafetyScore> scores);

/// `{"total_words","matched_words","ratio","per_category":{...}}`; ratio is
/// null when total_words is 0.
nlohmann::json score_to_json(const SafetyScore& s);
SafetyScore score_from_json(const nlohmann::json& j);

nlohmann::json category_counts_to_json(const CategoryCounts& c);
CategoryCounts category_counts_from_json(const nlohmann::json& j);

/// ratio for the given counts; total must be > 0.
inline double pooled_ratio(std::uint64_t matched, std::uint64_t total) {
  return static_cast<double>(matched) / static_cast<double>(total);
}

}  // namespace safeguard
