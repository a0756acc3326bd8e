#include "segkit/tokenizer.hpp"

#include <fstream>

#include "segkit/error.hpp"
#include "segkit/unicode.hpp"

namespace segkit {
namespace {

std::vector<std::u32string> split_on_space(std::u32string_view text) {
  std::vector<std::u32string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && unicode::is_split_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !unicode::is_split_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::u32string clean_text(std::u32string_view text) {
  std::u32string out;
  out.reserve(text.size() + 8);
  for (char32_t cp : text) {
    if (cp == 0 || cp == 0xFFFD || unicode::is_control(cp)) continue;
    if (unicode::is_whitespace(cp)) {
      out.push_back(U' ');
    } else if (unicode::is_cjk(cp)) {
      out.push_back(U' ');
      out.push_back(cp);
      out.push_back(U' ');
    } else {
      out.push_back(cp);
    }
  }
  return out;
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary vocab;
  vocab.index_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) {
      throw FormatError("vocabulary: empty token at line " + std::to_string(i + 1));
    }
    auto [it, inserted] = vocab.index_.emplace(tokens[i], static_cast<TokenId>(i));
    if (!inserted) {
      throw FormatError("vocabulary: duplicate token '" + tokens[i] + "' at line " +
                        std::to_string(i + 1) + " (first seen at line " +
                        std::to_string(it->second + 1) + ")");
    }
  }
  vocab.tokens_ = std::move(tokens);
  auto special = [&](std::string_view name) {
    auto id = vocab.find(std::string(name));
    if (!id) throw FormatError("vocabulary: missing special token " + std::string(name));
    return *id;
  };
  vocab.pad_id_ = special(kPadToken);
  vocab.unk_id_ = special(kUnkToken);
  vocab.cls_id_ = special(kClsToken);
  vocab.sep_id_ = special(kSepToken);
  vocab.mask_id_ = special(kMaskToken);
  return vocab;
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& token : tokens_) out << token << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t blank_run = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      ++blank_run;
      continue;
    }
    if (blank_run > 0) {
      throw FormatError("vocabulary " + path.string() + ": blank line before line " +
                        std::to_string(tokens.size() + blank_run + 1));
    }
    tokens.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("read failed for " + path.string());
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<std::string> basic_tokenize(std::string_view text) {
  const std::u32string cleaned = clean_text(unicode::decode_utf8(text));
  std::vector<std::string> words;
  for (const auto& token : split_on_space(cleaned)) {
    const std::u32string normalized = unicode::strip_accents(unicode::to_lower(token));
    std::u32string current;
    for (char32_t cp : normalized) {
      if (unicode::is_punctuation(cp)) {
        if (!current.empty()) words.push_back(unicode::encode_utf8(current));
        current.clear();
        words.push_back(unicode::encode_utf8(std::u32string(1, cp)));
      } else if (unicode::is_split_space(cp)) {
        // Only reachable through exotic case mappings; keep parity with a
        // second whitespace split.
        if (!current.empty()) words.push_back(unicode::encode_utf8(current));
        current.clear();
      } else {
        current.push_back(cp);
      }
    }
    if (!current.empty()) words.push_back(unicode::encode_utf8(current));
  }
  return words;
}

std::vector<std::string> wordpiece(std::string_view word, const Vocabulary& vocab,
                                   std::size_t max_chars) {
  const std::u32string chars = unicode::decode_utf8(word);
  if (chars.size() > max_chars) return {std::string(kUnkToken)};
  std::vector<std::string> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < chars.size()) {
    std::size_t end = chars.size();
    bool found = false;
    while (start < end) {
      candidate.clear();
      if (start > 0) candidate = "##";
      for (std::size_t i = start; i < end; ++i) unicode::append_utf8(candidate, chars[i]);
      if (vocab.contains(candidate)) {
        found = true;
        break;
      }
      --end;
    }
    if (!found) return {std::string(kUnkToken)};
    pieces.push_back(candidate);
    start = end;
  }
  return pieces;
}

namespace {

void append_word(const std::string& word, const Vocabulary& vocab, Encoding& out) {
  for (const auto& piece : wordpiece(word, vocab)) {
    out.ids.push_back(vocab.find(piece).value_or(vocab.unk_id()));
  }
}

}  // namespace

Encoding encode(std::string_view text, const Vocabulary& vocab) {
  Encoding out;
  for (const auto& word : basic_tokenize(text)) {
    out.word_starts.push_back(out.ids.size());
    append_word(word, vocab, out);
  }
  return out;
}

Encoding encode_words(std::span<const std::string> words, const Vocabulary& vocab) {
  Encoding out;
  out.word_starts.reserve(words.size());
  for (const auto& word : words) {
    out.word_starts.push_back(out.ids.size());
    const std::size_t before = out.ids.size();
    for (const auto& sub : basic_tokenize(word)) append_word(sub, vocab, out);
    if (out.ids.size() == before) out.ids.push_back(vocab.unk_id());
  }
  return out;
}

std::string tokenize_to_line(std::string_view text, const Vocabulary& vocab) {
  std::string line;
  for (const auto& word : basic_tokenize(text)) {
    for (const auto& piece : wordpiece(word, vocab)) {
      if (!line.empty()) line.push_back(' ');
      line += piece;
    }
  }
  return line;
}

}  // namespace segkit
