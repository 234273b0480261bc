#include "safeguard/lexicon.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "safeguard/digest.hpp"
#include "safeguard/error.hpp"

namespace safeguard {

struct CompiledLexicon::Edges {
  std::unordered_map<std::string, std::uint32_t> vocabulary;
  std::unordered_map<std::uint64_t, std::uint32_t> transitions;

  static std::uint64_t key(std::uint32_t state, std::uint32_t token) {
    return (static_cast<std::uint64_t>(state) << 32) | token;
  }
};

namespace {

constexpr std::uint32_t kRoot = 0;
constexpr std::uint32_t kNoEdge = 0xFFFFFFFFu;
constexpr std::uint32_t kUnknownToken = 0xFFFFFFFFu;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string at_line(std::size_t line_no, std::string_view what) {
  return "line " + std::to_string(line_no) + ": " + std::string(what);
}

void validate_entry(const LexiconEntry& e) {
  if (e.pattern.empty()) throw Error(ErrorCode::EmptyPattern, "entry has no tokens");
  if (e.pattern.size() > kMaxPatternTokens) {
    throw Error(ErrorCode::MalformedLine,
                "pattern '" + e.pattern_text() + "' exceeds 5 tokens");
  }
  for (const auto& tok : e.pattern) {
    const TokenStream norm = tokenize(tok);
    if (norm.size() != 1 || norm.tokens.front() != tok) {
      throw Error(ErrorCode::MalformedLine,
                  "pattern token '" + tok + "' is not a normalized word");
    }
  }
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::HateSpeech: return "hate_speech";
    case Category::SelfHarm: return "self_harm";
    case Category::Sexual: return "sexual";
    case Category::Violence: return "violence";
  }
  return "unknown";
}

std::optional<Category> parse_category(std::string_view name) {
  for (Category c : kAllCategories) {
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

std::string LexiconEntry::pattern_text() const {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (i) out.push_back(' ');
    out += pattern[i];
  }
  return out;
}

CompiledLexicon CompiledLexicon::compile(std::vector<LexiconEntry> entries) {
  for (const auto& e : entries) validate_entry(e);
  std::sort(entries.begin(), entries.end());
  const auto dup = std::adjacent_find(entries.begin(), entries.end());
  if (dup != entries.end()) {
    throw Error(ErrorCode::DuplicateEntry, dup->pattern_text() + "," +
                                               std::string(category_name(dup->category)));
  }

  CompiledLexicon lex;
  lex.entries_ = std::move(entries);
  lex.version_tag_ = "lex-" + sha256_hex(lex.to_csv()).substr(0, 16);
  lex.build();
  return lex;
}

void CompiledLexicon::build() {
  auto edges = std::make_shared<Edges>();
  nodes_.assign(1, Node{});

  // Trie over interned token ids; per-node entry lists collected first.
  std::vector<std::vector<std::uint32_t>> node_entries(1);
  for (std::uint32_t e = 0; e < entries_.size(); ++e) {
    std::uint32_t state = kRoot;
    for (const auto& tok : entries_[e].pattern) {
      auto [vit, inserted] = edges->vocabulary.try_emplace(
          tok, static_cast<std::uint32_t>(edges->vocabulary.size()));
      const std::uint64_t k = Edges::key(state, vit->second);
      auto it = edges->transitions.find(k);
      if (it == edges->transitions.end()) {
        const auto next = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back(Node{0, 0, nodes_[state].depth + 1, 0, 0});
        node_entries.emplace_back();
        edges->transitions.emplace(k, next);
        state = next;
      } else {
        state = it->second;
      }
    }
    node_entries[state].push_back(e);
  }
  edges_ = edges;

  // Group children by parent so the BFS below is deterministic.
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> children(nodes_.size());
  for (const auto& [k, child] : edges->transitions) {
    children[static_cast<std::uint32_t>(k >> 32)].emplace_back(
        static_cast<std::uint32_t>(k & 0xFFFFFFFFu), child);
  }
  for (auto& c : children) std::sort(c.begin(), c.end());

  std::deque<std::uint32_t> queue;
  for (const auto& [tok, child] : children[kRoot]) {
    nodes_[child].fail = kRoot;
    queue.push_back(child);
  }
  while (!queue.empty()) {
    const std::uint32_t state = queue.front();
    queue.pop_front();
    for (const auto& [tok, child] : children[state]) {
      std::uint32_t f = nodes_[state].fail;
      while (f != kRoot && goto_edge(f, tok) == kNoEdge) f = nodes_[f].fail;
      const std::uint32_t g = goto_edge(f, tok);
      nodes_[child].fail = (g != kNoEdge && g != child) ? g : kRoot;
      queue.push_back(child);
    }
    // BFS order guarantees the fail target is final before we read it.
    const std::uint32_t f = nodes_[state].fail;
    nodes_[state].output_link =
        (f != kRoot && node_entries[f].empty()) ? nodes_[f].output_link : f;
  }

  outputs_.clear();
  for (std::uint32_t s = 0; s < nodes_.size(); ++s) {
    nodes_[s].outputs_begin = static_cast<std::uint32_t>(outputs_.size());
    outputs_.insert(outputs_.end(), node_entries[s].begin(), node_entries[s].end());
    nodes_[s].outputs_end = static_cast<std::uint32_t>(outputs_.size());
  }
}

std::uint32_t CompiledLexicon::goto_edge(std::uint32_t state, std::uint32_t token_id) const {
  const auto it = edges_->transitions.find(Edges::key(state, token_id));
  return it == edges_->transitions.end() ? kNoEdge : it->second;
}

std::uint32_t CompiledLexicon::step(std::uint32_t state, std::uint32_t token_id) const {
  if (token_id == kUnknownToken) return kRoot;
  for (;;) {
    const std::uint32_t next = goto_edge(state, token_id);
    if (next != kNoEdge) return next;
    if (state == kRoot) return kRoot;
    state = nodes_[state].fail;
  }
}

std::vector<Match> CompiledLexicon::match(const TokenStream& stream) const {
  std::vector<Match> out;
  if (entries_.empty()) return out;

  std::uint32_t state = kRoot;
  for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
    const auto vit = edges_->vocabulary.find(stream.tokens[i]);
    state = step(state, vit == edges_->vocabulary.end() ? kUnknownToken : vit->second);

    std::uint32_t s = state;
    if (nodes_[s].outputs_begin == nodes_[s].outputs_end) s = nodes_[s].output_link;
    for (; s != kRoot; s = nodes_[s].output_link) {
      const Node& n = nodes_[s];
      for (std::uint32_t k = n.outputs_begin; k < n.outputs_end; ++k) {
        out.push_back(Match{i + 1 - n.depth, n.depth, outputs_[k]});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string CompiledLexicon::to_csv() const {
  std::string out;
  for (const auto& e : entries_) {
    out += e.pattern_text();
    out.push_back(',');
    out += category_name(e.category);
    out.push_back('\n');
  }
  return out;
}

CompiledLexicon load_lexicon(std::string_view source) {
  std::vector<LexiconEntry> entries;
  std::map<LexiconEntry, std::size_t> seen;  // entry -> first line
  std::size_t line_no = 0;

  std::size_t pos = 0;
  while (pos <= source.size()) {
    const std::size_t nl = source.find('\n', pos);
    const std::string_view raw =
        source.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? source.size() + 1 : nl + 1;
    ++line_no;

    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;

    const std::size_t comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
      throw Error(ErrorCode::MalformedLine, at_line(line_no, "expected 'pattern,category'"));
    }
    const std::string_view pattern = trim(line.substr(0, comma));
    const std::string_view category = trim(line.substr(comma + 1));

    const auto cat = parse_category(category);
    if (!cat) {
      throw Error(ErrorCode::UnknownCategory,
                  at_line(line_no, "unknown category '" + std::string(category) + "'"));
    }
    if (pattern.empty()) throw Error(ErrorCode::EmptyPattern, at_line(line_no, "empty pattern"));

    LexiconEntry entry;
    entry.category = *cat;
    std::size_t tpos = 0;
    while (tpos <= pattern.size()) {
      const std::size_t sp = pattern.find(' ', tpos);
      const std::string_view tok =
          pattern.substr(tpos, sp == std::string_view::npos ? std::string_view::npos : sp - tpos);
      if (tok.empty()) {
        throw Error(ErrorCode::MalformedLine,
                    at_line(line_no, "phrase tokens must be separated by single spaces"));
      }
      entry.pattern.emplace_back(tok);
      tpos = (sp == std::string_view::npos) ? pattern.size() + 1 : sp + 1;
    }

    try {
      validate_entry(entry);
    } catch (const Error& e) {
      throw Error(e.code(), at_line(line_no, e.detail()));
    }
    if (auto [it, inserted] = seen.emplace(entry, line_no); !inserted) {
      throw Error(ErrorCode::DuplicateEntry,
                  at_line(line_no, "repeats line " + std::to_string(it->second)));
    }
    entries.push_back(std::move(entry));
  }
  return CompiledLexicon::compile(std::move(entries));
}

CompiledLexicon load_lexicon_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_lexicon(ss.str());
}

std::vector<Match> match_tokens(const TokenStream& stream, const CompiledLexicon& lexicon) {
  return lexicon.match(stream);
}

}  // namespace safeguard
