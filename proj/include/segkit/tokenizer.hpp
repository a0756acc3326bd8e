#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace segkit {

using TokenId = std::int32_t;

// Ordered token list; a token's id is its position. Immutable once built.
class Vocabulary {
 public:
  // Throws FormatError on duplicates, empty tokens or a missing special token.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<TokenId> find(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId pad_id() const { return pad_id_; }
  TokenId unk_id() const { return unk_id_; }
  TokenId cls_id() const { return cls_id_; }
  TokenId sep_id() const { return sep_id_; }
  TokenId mask_id() const { return mask_id_; }

  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_id_ = 0;
  TokenId unk_id_ = 0;
  TokenId cls_id_ = 0;
  TokenId sep_id_ = 0;
  TokenId mask_id_ = 0;
};

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";

// One token per LF-terminated line, id = line index. Trailing blank lines are
// ignored; a blank line anywhere else is a format error.
Vocabulary load_vocab(const std::filesystem::path& path);

// Uncased pre-tokenization: drops control characters, isolates CJK
// ideographs, lowercases, strips accents and splits off punctuation.
std::vector<std::string> basic_tokenize(std::string_view text);

inline constexpr std::size_t kDefaultMaxWordChars = 200;

// Greedy longest-match-first word-piece split. Returns {"[UNK]"} when the
// word is longer than max_chars code points or cannot be covered.
std::vector<std::string> wordpiece(std::string_view word, const Vocabulary& vocab,
                                   std::size_t max_chars = kDefaultMaxWordChars);

struct Encoding {
  std::vector<TokenId> ids;
  // word_starts[w] is the index in `ids` of word w's left-most piece.
  std::vector<std::size_t> word_starts;
};

Encoding encode(std::string_view text, const Vocabulary& vocab);

// Encodes pre-split words. Each input word maps to one entry of
// word_starts; a word that normalizes to nothing is encoded as [UNK].
Encoding encode_words(std::span<const std::string> words, const Vocabulary& vocab);

// Space-joined piece strings, the format of `segkit tokenize`.
std::string tokenize_to_line(std::string_view text, const Vocabulary& vocab);

}  // namespace segkit
