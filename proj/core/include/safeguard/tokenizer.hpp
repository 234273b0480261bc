#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace safeguard {

/// Byte range of a token in the text it was cut from.
struct TokenSpan {
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;
  std::size_t char_begin = 0;  // code point offsets, for UI highlighting
  std::size_t char_end = 0;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

/// Ordered, normalized word tokens. A token's index is its ordinal position n.
///
/// `spans` is parallel to `tokens` when the stream came from tokenize(), and
/// empty when it was assembled from tokens directly.
struct TokenStream {
  std::vector<std::string> tokens;
  std::vector<TokenSpan> spans;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }

  static TokenStream from_tokens(std::vector<std::string> tokens);

  friend bool operator==(const TokenStream&, const TokenStream&) = default;
};

/// Lowercases and splits on every code point that is not a letter or digit.
/// Apostrophes (U+0027, U+2019) are kept only between two word characters and
/// are normalized to U+0027. Invalid UTF-8 bytes act as separators.
TokenStream tokenize(std::string_view text);

/// Appends the tokens of `text` to `out` without recording spans.
void append_tokens(std::string_view text, std::vector<std::string>& out);

/// True if the code point counts as a word character (letter or digit).
bool is_word_code_point(char32_t cp) noexcept;

/// Simple single-code-point lowercase mapping.
char32_t to_lower_code_point(char32_t cp) noexcept;

}  // namespace safeguard
