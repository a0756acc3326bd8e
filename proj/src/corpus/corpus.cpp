#include "segkit/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "segkit/error.hpp"

namespace segkit {

std::string to_string(UnitMode mode) { return mode == UnitMode::kDocument ? "document" : "discourse"; }

UnitMode parse_unit_mode(const std::string& text) {
  if (text == "document") return UnitMode::kDocument;
  if (text == "discourse") return UnitMode::kDiscourse;
  throw InvalidArgument("unknown mode '" + text + "' (expected document or discourse)");
}

Sentence make_sentence(std::vector<std::string> words, const Vocabulary& vocab) {
  Sentence s;
  Encoding enc = encode_words(words, vocab);
  s.words = std::move(words);
  s.pieces = std::move(enc.ids);
  s.word_starts = std::move(enc.word_starts);
  return s;
}

void validate(Document& doc) {
  if (doc.sentences.empty()) throw InvalidArgument("document '" + doc.id + "' has no sentences");
  for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
    if (doc.sentences[i].words.empty()) {
      throw InvalidArgument("document '" + doc.id + "': sentence " + std::to_string(i) + " is empty");
    }
  }
  std::sort(doc.boundaries.begin(), doc.boundaries.end());
  doc.boundaries.erase(std::unique(doc.boundaries.begin(), doc.boundaries.end()), doc.boundaries.end());
  if (!doc.boundaries.empty() && doc.boundaries.back() + 1 >= doc.sentences.size()) {
    throw InvalidArgument("document '" + doc.id + "': boundary " + std::to_string(doc.boundaries.back()) +
                          " is not internal to " + std::to_string(doc.sentences.size()) + " sentences");
  }
}

void validate(DiscourseSentence& sent) {
  if (sent.words.empty()) throw InvalidArgument("sentence '" + sent.id + "' has no words");
  std::sort(sent.edu_starts.begin(), sent.edu_starts.end());
  sent.edu_starts.erase(std::unique(sent.edu_starts.begin(), sent.edu_starts.end()), sent.edu_starts.end());
  for (std::size_t j : sent.edu_starts) {
    if (j == 0 || j >= sent.words.size()) {
      throw InvalidArgument("sentence '" + sent.id + "': EDU start " + std::to_string(j) + " outside (0, " +
                            std::to_string(sent.words.size()) + ")");
    }
  }
}

Document to_document(const DiscourseSentence& sent, const Vocabulary& vocab) {
  Document doc;
  doc.id = sent.id;
  for (const auto& w : sent.words) doc.sentences.push_back(make_sentence({w}, vocab));
  for (std::size_t j : sent.edu_starts) doc.boundaries.push_back(j - 1);
  return doc;
}

namespace {

std::vector<CandidateExample> extract_windows(const Document& doc, std::size_t n, std::size_t m,
                                              const Vocabulary& vocab) {
  std::vector<CandidateExample> out;
  if (doc.sentences.size() < 2) return out;
  std::vector<TokenId> flat;
  std::vector<std::size_t> ends;
  for (const auto& s : doc.sentences) {
    flat.insert(flat.end(), s.pieces.begin(), s.pieces.end());
    ends.push_back(flat.size());
  }
  const std::set<std::size_t> labels(doc.boundaries.begin(), doc.boundaries.end());
  const std::size_t length = n + m + 2;
  for (std::size_t i = 0; i + 1 < doc.sentences.size(); ++i) {
    CandidateExample ex;
    ex.input_ids.assign(length, vocab.pad_id());
    ex.segment_ids.assign(length, 0);
    ex.attention_mask.assign(length, 0);
    ex.input_ids[0] = vocab.cls_id();
    ex.attention_mask[0] = 1;
    const std::size_t cut = ends[i];
    const std::size_t left = std::min(n, cut);
    for (std::size_t p = 0; p < left; ++p) {
      const std::size_t slot = 1 + n - left + p;
      ex.input_ids[slot] = flat[cut - left + p];
      ex.attention_mask[slot] = 1;
    }
    ex.input_ids[n + 1] = vocab.sep_id();
    ex.attention_mask[n + 1] = 1;
    const std::size_t right = std::min(m, flat.size() - cut);
    for (std::size_t p = 0; p < m; ++p) {
      const std::size_t slot = n + 2 + p;
      ex.segment_ids[slot] = 1;
      if (p < right) {
        ex.input_ids[slot] = flat[cut + p];
        ex.attention_mask[slot] = 1;
      }
    }
    ex.label = labels.contains(i) ? 1 : 0;
    ex.doc_id = doc.id;
    ex.position = i;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

std::vector<CandidateExample> extract_cross_segment(const Document& doc, std::size_t n, std::size_t m,
                                                    const Vocabulary& vocab) {
  if (n < 1 || n > kMaxSideContext || m > kMaxSideContext) {
    throw InvalidArgument("context " + std::to_string(n) + "-" + std::to_string(m) +
                          " outside 1..255 left, 0..255 right");
  }
  return extract_windows(doc, n, m, vocab);
}

std::vector<CandidateExample> extract_discourse_examples(const DiscourseSentence& sent, std::size_t n,
                                                         std::size_t m, const Vocabulary& vocab) {
  return extract_cross_segment(to_document(sent, vocab), n, m, vocab);
}

std::vector<Document> chunk_document(const Document& doc, std::size_t max_sentences) {
  if (max_sentences < 1) throw InvalidArgument("chunk size must be at least 1");
  std::vector<Document> chunks;
  for (std::size_t start = 0, c = 0; start < doc.sentences.size(); start += max_sentences, ++c) {
    const std::size_t end = std::min(doc.sentences.size(), start + max_sentences);
    Document chunk;
    chunk.id = doc.id + "#" + std::to_string(c);
    chunk.sentences.assign(doc.sentences.begin() + static_cast<std::ptrdiff_t>(start),
                           doc.sentences.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t b : doc.boundaries) {
      if (b >= start && b + 1 < end) chunk.boundaries.push_back(b - start);
    }
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

std::vector<TokenId> truncate_sentence(std::vector<TokenId> ids, TokenId cls_id, std::size_t max_tokens) {
  if (max_tokens < 2) throw InvalidArgument("max_tokens must be at least 2");
  if (ids.empty() || ids.front() != cls_id) ids.insert(ids.begin(), cls_id);
  if (ids.size() > max_tokens) ids.resize(max_tokens);
  return ids;
}

namespace {

std::vector<TokenId> top_ids(std::span<const TokenId> side, std::span<const std::uint8_t> mask, std::size_t keep) {
  std::map<TokenId, std::size_t> counts;
  for (std::size_t i = 0; i < side.size(); ++i) {
    if (mask[i] != 0) ++counts[side[i]];
  }
  std::vector<std::pair<TokenId, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > keep) ranked.resize(keep);
  std::vector<TokenId> ids;
  for (const auto& [id, count] : ranked) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

CandidateExample frequency_bag_transform(const CandidateExample& example, const Vocabulary& vocab,
                                         std::size_t window, std::size_t keep) {
  if (example.input_ids.size() != 2 * window + 2) {
    throw ShapeError("frequency bag: example length " + std::to_string(example.input_ids.size()) +
                     " does not match window " + std::to_string(window) + " per side");
  }
  const std::span<const TokenId> ids(example.input_ids);
  const std::span<const std::uint8_t> mask(example.attention_mask);
  const auto left = top_ids(ids.subspan(1, window), mask.subspan(1, window), keep);
  const auto right = top_ids(ids.subspan(window + 2, window), mask.subspan(window + 2, window), keep);

  CandidateExample out;
  const std::size_t length = 2 * keep + 2;
  out.input_ids.assign(length, vocab.pad_id());
  out.segment_ids.assign(length, 0);
  out.attention_mask.assign(length, 0);
  out.input_ids[0] = vocab.cls_id();
  out.attention_mask[0] = 1;
  for (std::size_t p = 0; p < left.size(); ++p) {
    const std::size_t slot = 1 + keep - left.size() + p;
    out.input_ids[slot] = left[p];
    out.attention_mask[slot] = 1;
  }
  out.input_ids[keep + 1] = vocab.sep_id();
  out.attention_mask[keep + 1] = 1;
  for (std::size_t p = 0; p < keep; ++p) {
    const std::size_t slot = keep + 2 + p;
    out.segment_ids[slot] = 1;
    if (p < right.size()) {
      out.input_ids[slot] = right[p];
      out.attention_mask[slot] = 1;
    }
  }
  out.label = example.label;
  out.doc_id = example.doc_id;
  out.position = example.position;
  return out;
}

std::vector<CandidateExample> extract_frequency_bags(const Document& doc, const Vocabulary& vocab,
                                                     std::size_t window, std::size_t keep) {
  std::vector<CandidateExample> out;
  for (const auto& ex : extract_windows(doc, window, window, vocab)) {
    out.push_back(frequency_bag_transform(ex, vocab, window, keep));
  }
  return out;
}

std::vector<Document> Dataset::as_documents(const Vocabulary& vocab) const {
  if (mode == UnitMode::kDocument) return docs;
  std::vector<Document> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(to_document(s, vocab));
  return out;
}

std::vector<Fold> kfold_split(std::size_t size, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("k-fold needs k >= 2");
  if (k > size) {
    throw InvalidArgument("k-fold: k = " + std::to_string(k) + " exceeds dataset size " + std::to_string(size));
  }
  std::vector<std::size_t> order(size);
  for (std::size_t i = 0; i < size; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<Fold> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = size / k + (f < size % k ? 1 : 0);
    folds[f].validation.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                               order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(folds[f].validation.begin(), folds[f].validation.end());
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].validation.begin(), folds[g].validation.end());
    }
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

std::vector<DiscourseSentence> merge_overlapping_edu_sentences(
    const std::vector<std::vector<std::string>>& sentences,
    const std::vector<std::pair<std::size_t, std::size_t>>& edu_spans, const std::string& id_prefix) {
  std::vector<std::size_t> starts;
  std::vector<std::size_t> owner;  // word offset -> sentence
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    starts.push_back(owner.size());
    owner.insert(owner.end(), sentences[s].size(), s);
  }
  const std::size_t total = owner.size();
  // joined[s]: sentence s is merged with sentence s + 1
  std::vector<bool> joined(sentences.size(), false);
  for (const auto& [b, e] : edu_spans) {
    if (b >= e || e > total) {
      throw InvalidArgument("EDU span [" + std::to_string(b) + ", " + std::to_string(e) + ") outside " +
                            std::to_string(total) + " words");
    }
    for (std::size_t s = owner[b]; s < owner[e - 1]; ++s) joined[s] = true;
  }
  std::vector<DiscourseSentence> out;
  std::size_t s = 0;
  while (s < sentences.size()) {
    std::size_t last = s;
    while (last + 1 < sentences.size() && joined[last]) ++last;
    DiscourseSentence merged;
    merged.id = id_prefix + ":" + std::to_string(out.size());
    for (std::size_t t = s; t <= last; ++t) {
      merged.words.insert(merged.words.end(), sentences[t].begin(), sentences[t].end());
    }
    const std::size_t begin = starts[s];
    const std::size_t end = begin + merged.words.size();
    for (const auto& [b, e] : edu_spans) {
      (void)e;
      if (b > begin && b < end) merged.edu_starts.push_back(b - begin);
    }
    std::sort(merged.edu_starts.begin(), merged.edu_starts.end());
    merged.edu_starts.erase(std::unique(merged.edu_starts.begin(), merged.edu_starts.end()), merged.edu_starts.end());
    if (!merged.words.empty()) out.push_back(std::move(merged));
    s = last + 1;
  }
  return out;
}

}  // namespace segkit
