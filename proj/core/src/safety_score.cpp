#include "safeguard/safety_score.hpp"

#include <vector>

#include "safeguard/error.hpp"

namespace safeguard {

SafetyScore score_from_matches(std::size_t total_words, std::span<const Match> matches,
                               const CompiledLexicon& lexicon) {
  if (total_words == 0) throw Error(ErrorCode::EmptyCorpus, "stream has no tokens");

  // One bit per category per position.
  std::vector<std::uint8_t> covered(total_words, 0);
  for (const Match& m : matches) {
    const auto bit =
        static_cast<std::uint8_t>(1u << static_cast<unsigned>(lexicon.entry(m).category));
    for (std::size_t p = m.start_index; p < m.start_index + m.length; ++p) covered[p] |= bit;
  }

  SafetyScore score;
  score.total_words = total_words;
  for (std::uint8_t bits : covered) {
    if (bits == 0) continue;
    ++score.matched_words;
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      if (bits & (1u << c)) ++score.per_category[c];
    }
  }
  score.ratio = pooled_ratio(score.matched_words, score.total_words);
  return score;
}

SafetyScore safety_score(const TokenStream& stream, const CompiledLexicon& lexicon) {
  if (stream.empty()) throw Error(ErrorCode::EmptyCorpus, "stream has no tokens");
  const auto matches = lexicon.match(stream);
  return score_from_matches(stream.size(), matches, lexicon);
}

SafetyScore merge_scores(std::span<const SafetyScore> scores) {
  if (scores.empty()) throw Error(ErrorCode::EmptyList, "no scores to merge");
  SafetyScore out;
  for (const auto& s : scores) {
    out.total_words += s.total_words;
    out.matched_words += s.matched_words;
    for (std::size_t c = 0; c < kCategoryCount; ++c) out.per_category[c] += s.per_category[c];
  }
  if (out.total_words == 0) throw Error(ErrorCode::EmptyCorpus, "merged scores cover no words");
  out.ratio = pooled_ratio(out.matched_words, out.total_words);
  return out;
}

nlohmann::json category_counts_to_json(const CategoryCounts& c) {
  nlohmann::json j = nlohmann::json::object();
  for (Category cat : kAllCategories) {
    j[std::string(category_name(cat))] = c[static_cast<std::size_t>(cat)];
  }
  return j;
}

CategoryCounts category_counts_from_json(const nlohmann::json& j) {
  CategoryCounts c{};
  for (Category cat : kAllCategories) {
    c[static_cast<std::size_t>(cat)] = j.at(std::string(category_name(cat))).get<std::uint64_t>();
  }
  return c;
}

nlohmann::json score_to_json(const SafetyScore& s) {
  return {{"total_words", s.total_words},
          {"matched_words", s.matched_words},
          {"ratio", s.total_words ? nlohmann::json(s.ratio) : nlohmann::json(nullptr)},
          {"per_category", category_counts_to_json(s.per_category)}};
}

SafetyScore score_from_json(const nlohmann::json& j) {
  SafetyScore s;
  s.total_words = j.at("total_words").get<std::uint64_t>();
  s.matched_words = j.at("matched_words").get<std::uint64_t>();
  s.per_category = category_counts_from_json(j.at("per_category"));
  s.ratio = j.at("ratio").is_null() ? 0.0 : j.at("ratio").get<double>();
  return s;
}

}  // namespace safeguard
