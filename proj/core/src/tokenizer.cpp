#include "safeguard/tokenizer.hpp"

#include <algorithm>
#include <cstdint>

namespace safeguard {
namespace {

struct CodeRange {
  char32_t lo;
  char32_t hi;
};

struct CaseMapping {
  char32_t from;
  char32_t to;
};

#include "unicode_tables.inc"

constexpr char32_t kReplacement = 0xFFFD;

struct Decoded {
  char32_t cp;
  std::size_t length;  // bytes consumed, >= 1
};

Decoded decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};

  std::size_t len = 0;
  char32_t cp = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2, cp = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, cp = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, cp = b0 & 0x07, min = 0x10000;
  } else {
    return {kReplacement, 1};
  }
  if (i + len > s.size()) return {kReplacement, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {kReplacement, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
    return {kReplacement, 1};
  }
  return {cp, len};
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == U'’'; }

// Walks `text` once, calling `emit(token, span)` per token.
template <typename Emit>
void scan(std::string_view text, bool want_spans, Emit&& emit) {
  std::string token;
  std::size_t i = 0;
  std::size_t chars = 0;

  while (i < text.size()) {
    Decoded d = decode_utf8(text, i);
    if (!is_word_code_point(d.cp)) {
      i += d.length;
      ++chars;
      continue;
    }

    token.clear();
    TokenSpan span{i, 0, chars, 0};
    for (;;) {
      // Consume a run of word characters.
      while (i < text.size()) {
        d = decode_utf8(text, i);
        if (!is_word_code_point(d.cp)) break;
        const char32_t low = to_lower_code_point(d.cp);
        if (low < 0x80) {
          token.push_back(static_cast<char>(low));
        } else {
          append_utf8(token, low);
        }
        i += d.length;
        ++chars;
      }
      // An apostrophe continues the token only if a word character follows.
      if (i >= text.size()) break;
      const Decoded apos = decode_utf8(text, i);
      if (!is_apostrophe(apos.cp) || i + apos.length >= text.size()) break;
      const Decoded next = decode_utf8(text, i + apos.length);
      if (!is_word_code_point(next.cp)) break;
      token.push_back('\'');
      i += apos.length;
      ++chars;
    }
    if (want_spans) {
      span.byte_end = i;
      span.char_end = chars;
    }
    emit(token, span);
  }
}

}  // namespace

bool is_word_code_point(char32_t cp) noexcept {
  if (cp < 0x80) {
    return (cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z') ||
           (cp >= U'0' && cp <= U'9');
  }
  const auto* end = std::end(kWordRanges);
  const auto* it = std::upper_bound(
      std::begin(kWordRanges), end, cp,
      [](char32_t value, const CodeRange& r) { return value < r.lo; });
  if (it == std::begin(kWordRanges)) return false;
  --it;
  return cp <= it->hi;
}

char32_t to_lower_code_point(char32_t cp) noexcept {
  if (cp < 0x80) {
    return (cp >= U'A' && cp <= U'Z') ? cp + 32 : cp;
  }
  const auto* end = std::end(kLowerMap);
  const auto* it = std::lower_bound(
      std::begin(kLowerMap), end, cp,
      [](const CaseMapping& m, char32_t value) { return m.from < value; });
  return (it != end && it->from == cp) ? it->to : cp;
}

TokenStream TokenStream::from_tokens(std::vector<std::string> tokens) {
  TokenStream stream;
  stream.tokens = std::move(tokens);
  return stream;
}

TokenStream tokenize(std::string_view text) {
  TokenStream stream;
  scan(text, true, [&](const std::string& token, const TokenSpan& span) {
    stream.tokens.push_back(token);
    stream.spans.push_back(span);
  });
  return stream;
}

void append_tokens(std::string_view text, std::vector<std::string>& out) {
  scan(text, false,
       [&](const std::string& token, const TokenSpan&) { out.push_back(token); });
}

}  // namespace safeguard
