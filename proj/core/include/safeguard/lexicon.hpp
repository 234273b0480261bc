#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "safeguard/tokenizer.hpp"

namespace safeguard {

enum class Category : std::uint8_t { HateSpeech = 0, SelfHarm, Sexual, Violence };

inline constexpr std::size_t kCategoryCount = 4;
inline constexpr std::array<Category, kCategoryCount> kAllCategories = {
    Category::HateSpeech, Category::SelfHarm, Category::Sexual, Category::Violence};

/// File/wire name: hate_speech, self_harm, sexual, violence.
std::string_view category_name(Category c);
std::optional<Category> parse_category(std::string_view name);

inline constexpr std::size_t kMaxPatternTokens = 5;

struct LexiconEntry {
  std::vector<std::string> pattern;  // 1..5 normalized tokens
  Category category = Category::HateSpeech;

  std::string pattern_text() const;  // tokens joined by single spaces

  friend auto operator<=>(const LexiconEntry&, const LexiconEntry&) = default;
};

/// One occurrence of a lexicon entry as a consecutive token run.
struct Match {
  std::size_t start_index = 0;
  std::size_t length = 0;
  std::size_t entry_index = 0;  // into CompiledLexicon::entries()

  friend auto operator<=>(const Match&, const Match&) = default;
};

/// The NSFW dictionary compiled into a token-level Aho-Corasick automaton.
///
/// Immutable after construction; concurrent readers need no synchronization.
/// Entries are held in canonical (pattern, category) order, so matching
/// behaviour depends only on the entry set.
class CompiledLexicon {
 public:
  /// Throws Error{EmptyPattern, MalformedLine, DuplicateEntry}.
  static CompiledLexicon compile(std::vector<LexiconEntry> entries);

  const std::vector<LexiconEntry>& entries() const noexcept { return entries_; }
  const LexiconEntry& entry(const Match& m) const { return entries_.at(m.entry_index); }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& version_tag() const noexcept { return version_tag_; }

  /// All (position, entry) occurrences sorted by (start, length, entry).
  std::vector<Match> match(const TokenStream& stream) const;

  /// Canonical CSV text of the entry set (sorted, no comments).
  std::string to_csv() const;

 private:
  struct Node {
    std::uint32_t fail = 0;
    std::uint32_t output_link = 0;  // nearest proper suffix state with outputs
    std::uint32_t depth = 0;
    std::uint32_t outputs_begin = 0;
    std::uint32_t outputs_end = 0;
  };

  CompiledLexicon() = default;
  void build();
  std::uint32_t step(std::uint32_t state, std::uint32_t token_id) const;
  std::uint32_t goto_edge(std::uint32_t state, std::uint32_t token_id) const;

  std::vector<LexiconEntry> entries_;
  std::string version_tag_;

  // Automaton. Pattern tokens are interned to ids; `edges_` holds the
  // vocabulary and goto transitions.
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> outputs_;  // entry indices, grouped per node
  struct Edges;
  std::shared_ptr<const Edges> edges_;
};

/// Parses lexicon CSV text (`pattern,category` per line, `#` comments,
/// blank lines ignored). Throws Error{UnknownCategory, EmptyPattern,
/// DuplicateEntry, MalformedLine}; details carry the 1-based line number.
CompiledLexicon load_lexicon(std::string_view source);
CompiledLexicon load_lexicon_file(const std::filesystem::path& path);

std::vector<Match> match_tokens(const TokenStream& stream, const CompiledLexicon& lexicon);

}  // namespace safeguard
