#include <algorithm>

#include "segkit/corpus.hpp"
#include "segkit/error.hpp"

namespace segkit {
namespace {

std::size_t draw(Rng& rng, IntRange r) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(r.lo), static_cast<std::int64_t>(r.hi)));
}

void check_range(const char* what, IntRange r, std::size_t min_lo) {
  if (r.lo < min_lo || r.hi < r.lo) {
    throw InvalidArgument(std::string(what) + " range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                          "] is invalid");
  }
}

}  // namespace

Vocabulary word_vocabulary(const std::vector<std::string>& words) {
  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken),
                                  std::string(kSepToken), std::string(kMaskToken)};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<Document> generate_choi_style(const std::vector<Document>& pool, const ChoiConfig& config) {
  if (pool.empty()) throw InvalidArgument("choi-style generation: empty pool");
  if (config.segments_per_doc < 1) throw InvalidArgument("choi-style generation: segments_per_doc must be >= 1");
  if (config.segments_per_doc > 1 && pool.size() < 2) {
    throw InvalidArgument("choi-style generation: need at least two pool documents");
  }
  check_range("segment length", config.segment_len, 1);
  for (const auto& d : pool) {
    if (d.sentences.empty()) throw InvalidArgument("choi-style generation: pool document '" + d.id + "' is empty");
  }
  Rng rng(config.seed);
  std::vector<Document> out;
  out.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    Document doc;
    doc.id = "choi" + std::to_string(i);
    std::size_t previous = pool.size();
    for (std::size_t s = 0; s < config.segments_per_doc; ++s) {
      std::size_t src = rng.index(pool.size());
      while (src == previous) src = rng.index(pool.size());
      previous = src;
      const Document& p = pool[src];
      const std::size_t len = std::min(draw(rng, config.segment_len), p.sentences.size());
      const std::size_t offset = config.prefix_only ? 0 : rng.index(p.sentences.size() - len + 1);
      for (std::size_t k = 0; k < len; ++k) doc.sentences.push_back(p.sentences[offset + k]);
      if (s + 1 < config.segments_per_doc) doc.boundaries.push_back(doc.sentences.size() - 1);
    }
    out.push_back(std::move(doc));
  }
  return out;
}

SyntheticCorpus generate_topic_synthetic(const TopicConfig& config) {
  if (config.num_topics < 2) throw InvalidArgument("topic generation needs at least 2 topics");
  if (config.vocab_per_topic < 1) throw InvalidArgument("topic generation needs a non-empty topic vocabulary");
  check_range("sentence length", config.sentence_len, 1);
  check_range("segment length", config.segment_len, 1);
  check_range("segments per document", config.segments_per_doc, 1);
  std::vector<std::string> words;
  for (std::size_t t = 0; t < config.num_topics; ++t) {
    for (std::size_t w = 0; w < config.vocab_per_topic; ++w) {
      words.push_back("t" + std::to_string(t) + "w" + std::to_string(w));
    }
  }
  SyntheticCorpus corpus{word_vocabulary(words), {}};
  Rng rng(config.seed);
  for (std::size_t i = 0; i < config.count; ++i) {
    Document doc;
    doc.id = "topic" + std::to_string(i);
    const std::size_t segments = draw(rng, config.segments_per_doc);
    std::size_t topic = rng.index(config.num_topics);
    for (std::size_t s = 0; s < segments; ++s) {
      if (s > 0) {
        // uniform over the other topics
        const std::size_t step = 1 + rng.index(config.num_topics - 1);
        topic = (topic + step) % config.num_topics;
      }
      const std::size_t len = draw(rng, config.segment_len);
      for (std::size_t k = 0; k < len; ++k) {
        std::vector<std::string> sentence(draw(rng, config.sentence_len));
        for (auto& w : sentence) w = words[topic * config.vocab_per_topic + rng.index(config.vocab_per_topic)];
        doc.sentences.push_back(make_sentence(std::move(sentence), corpus.vocab));
      }
      if (s + 1 < segments) doc.boundaries.push_back(doc.sentences.size() - 1);
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

SyntheticCorpus generate_cluster_pool(const ClusterPoolConfig& config) {
  if (config.num_clusters < 1 || config.words_per_cluster < 1) {
    throw InvalidArgument("cluster pool needs at least one non-empty cluster");
  }
  if (config.shared_fraction < 0.0 || config.shared_fraction >= 1.0) {
    throw InvalidArgument("cluster pool: shared_fraction must be in [0, 1)");
  }
  if (config.shared_fraction > 0.0 && config.shared_words == 0) {
    throw InvalidArgument("cluster pool: shared_fraction > 0 needs shared words");
  }
  check_range("sentences per document", config.sentences_per_doc, 1);
  check_range("sentence length", config.sentence_len, 1);
  std::vector<std::string> words;
  for (std::size_t w = 0; w < config.shared_words; ++w) words.push_back("s" + std::to_string(w));
  for (std::size_t c = 0; c < config.num_clusters; ++c) {
    for (std::size_t w = 0; w < config.words_per_cluster; ++w) {
      words.push_back("c" + std::to_string(c) + "w" + std::to_string(w));
    }
  }
  SyntheticCorpus corpus{word_vocabulary(words), {}};
  Rng rng(config.seed);
  for (std::size_t i = 0; i < config.num_docs; ++i) {
    Document doc;
    doc.id = "pool" + std::to_string(i);
    const std::size_t cluster = rng.index(config.num_clusters);
    const std::size_t sentences = draw(rng, config.sentences_per_doc);
    for (std::size_t k = 0; k < sentences; ++k) {
      std::vector<std::string> sentence(draw(rng, config.sentence_len));
      for (auto& w : sentence) {
        if (rng.uniform() < config.shared_fraction) {
          w = words[rng.index(config.shared_words)];
        } else {
          w = words[config.shared_words + cluster * config.words_per_cluster + rng.index(config.words_per_cluster)];
        }
      }
      doc.sentences.push_back(make_sentence(std::move(sentence), corpus.vocab));
    }
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

}  // namespace segkit
