#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "segkit/rng.hpp"
#include "segkit/tokenizer.hpp"

namespace segkit {

struct Sentence {
  std::vector<std::string> words;
  std::vector<TokenId> pieces;
  std::vector<std::size_t> word_starts;  // left-most piece of each word

  bool operator==(const Sentence&) const = default;
};

// Boundary i means "unit i ends a segment". Only internal positions are
// stored: every index is < sentences.size() - 1. Kept sorted and unique.
struct Document {
  std::string id;
  std::vector<Sentence> sentences;
  std::vector<std::size_t> boundaries;

  std::size_t size() const { return sentences.size(); }
  bool operator==(const Document&) const = default;
};

// A sentence with elementary discourse units; edu_starts holds word indices
// j (0 < j < words.size()) where a new unit begins.
struct DiscourseSentence {
  std::string id;
  std::vector<std::string> words;
  std::vector<std::size_t> edu_starts;

  bool operator==(const DiscourseSentence&) const = default;
};

enum class UnitMode { kDocument, kDiscourse };

std::string to_string(UnitMode mode);
UnitMode parse_unit_mode(const std::string& text);

struct CandidateExample {
  std::vector<TokenId> input_ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;
  int label = 0;
  std::string doc_id;
  std::size_t position = 0;  // the unit just before the candidate break

  std::string key() const { return doc_id + ":" + std::to_string(position); }
  bool operator==(const CandidateExample&) const = default;
};

inline constexpr std::size_t kMaxSideContext = 255;

// Tokenizes words into a Sentence.
Sentence make_sentence(std::vector<std::string> words, const Vocabulary& vocab);

// Checks the internal-boundary invariant and sorts/deduplicates boundaries.
// Throws InvalidArgument naming the document on violation.
void validate(Document& doc);
void validate(DiscourseSentence& sent);

// Discourse sentences are handled as documents whose units are words: a unit
// boundary at j - 1 for every EDU start j.
Document to_document(const DiscourseSentence& sent, const Vocabulary& vocab);

// One example per internal break, laid out as
// [CLS] left(n, left-padded) [SEP] right(m, right-padded).
std::vector<CandidateExample> extract_cross_segment(const Document& doc, std::size_t n, std::size_t m,
                                                    const Vocabulary& vocab);
std::vector<CandidateExample> extract_discourse_examples(const DiscourseSentence& sent, std::size_t n,
                                                         std::size_t m, const Vocabulary& vocab);

inline constexpr std::size_t kMaxChunkSentences = 128;
inline constexpr std::size_t kMaxSentenceTokens = 64;

// Consecutive non-overlapping chunks. Chunk c has id "<id>#c"; boundaries
// are re-indexed and a boundary on a chunk's last unit is dropped.
std::vector<Document> chunk_document(const Document& doc, std::size_t max_sentences = kMaxChunkSentences);

// `ids` is a [CLS]-prefixed piece sequence (a missing [CLS] is added). Keeps
// [CLS] plus the first max_tokens - 1 pieces.
std::vector<TokenId> truncate_sentence(std::vector<TokenId> ids, TokenId cls_id,
                                       std::size_t max_tokens = kMaxSentenceTokens);

// Replaces each side of a window-per-side example by its `keep` most
// frequent ids (frequency desc, id asc), presented in id order.
CandidateExample frequency_bag_transform(const CandidateExample& example, const Vocabulary& vocab,
                                         std::size_t window = 256, std::size_t keep = 128);

// Frequency-bag examples straight from a document: window-per-side extraction
// followed by frequency_bag_transform.
std::vector<CandidateExample> extract_frequency_bags(const Document& doc, const Vocabulary& vocab,
                                                     std::size_t window = 256, std::size_t keep = 128);

struct IntRange {
  std::size_t lo = 0;
  std::size_t hi = 0;  // inclusive
};

struct ChoiConfig {
  std::size_t count = 0;
  std::size_t segments_per_doc = 10;
  IntRange segment_len{3, 11};
  bool prefix_only = false;  // take windows at offset 0 instead of a random offset
  std::uint64_t seed = 0;
};

// Each document concatenates segments_per_doc windows drawn from random pool
// documents; consecutive segments never share a pool document.
std::vector<Document> generate_choi_style(const std::vector<Document>& pool, const ChoiConfig& config);

struct TopicConfig {
  std::size_t num_topics = 8;
  std::size_t vocab_per_topic = 10;
  IntRange sentence_len{8, 12};
  IntRange segment_len{3, 6};
  IntRange segments_per_doc{2, 5};
  std::size_t count = 100;
  std::uint64_t seed = 0;
};

// Word-level corpus plus a whole-word vocabulary covering it.
struct SyntheticCorpus {
  Vocabulary vocab;
  std::vector<Document> docs;
};

// Sentences are i.i.d. unigram draws from one topic's disjoint word slice;
// adjacent segments always differ in topic.
SyntheticCorpus generate_topic_synthetic(const TopicConfig& config);

struct ClusterPoolConfig {
  std::size_t num_docs = 500;
  std::size_t num_clusters = 12;
  std::size_t words_per_cluster = 10;
  std::size_t shared_words = 20;
  double shared_fraction = 0.1;  // chance a word comes from the shared list
  IntRange sentences_per_doc{12, 30};
  IntRange sentence_len{6, 14};
  std::uint64_t seed = 0;
};

// Source pool for Choi-style construction: each document draws its words
// from one vocabulary cluster mixed with a shared list.
SyntheticCorpus generate_cluster_pool(const ClusterPoolConfig& config);

// Vocabulary made of the five special tokens followed by `words` in order.
Vocabulary word_vocabulary(const std::vector<std::string>& words);

struct Dataset {
  UnitMode mode = UnitMode::kDocument;
  std::vector<Document> docs;
  std::vector<DiscourseSentence> sentences;  // kDiscourse only

  std::size_t size() const { return mode == UnitMode::kDocument ? docs.size() : sentences.size(); }
  // Documents for either mode (discourse sentences converted per unit).
  std::vector<Document> as_documents(const Vocabulary& vocab) const;
};

Dataset ingest_jsonl(const std::filesystem::path& path, UnitMode mode, const Vocabulary& vocab);
void export_jsonl(const Dataset& data, const std::filesystem::path& path);
void export_jsonl(const std::vector<Document>& docs, const std::filesystem::path& path);

inline constexpr const char* kSectionSeparator = "========";

Document ingest_section_text(const std::filesystem::path& path, const Vocabulary& vocab,
                             const std::string& separator_prefix = kSectionSeparator);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Shuffled k-fold partition of item indices 0..size-1.
std::vector<Fold> kfold_split(std::size_t size, std::size_t k = 10, std::uint64_t seed = 0);

// edu_spans are [begin, end) word offsets over the concatenated sentences.
// Sentences crossed by an EDU are merged (transitively).
std::vector<DiscourseSentence> merge_overlapping_edu_sentences(
    const std::vector<std::vector<std::string>>& sentences,
    const std::vector<std::pair<std::size_t, std::size_t>>& edu_spans, const std::string& id_prefix);

}  // namespace segkit
