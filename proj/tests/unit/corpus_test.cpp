#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "segkit/corpus.hpp"
#include "segkit/error.hpp"
#include "test_paths.hpp"

using namespace segkit;

namespace {

// [PAD]=0 [UNK]=1 [CLS]=2 [SEP]=3 [MASK]=4, then w5..w49 with id = number.
Vocabulary toy_vocab() {
  std::vector<std::string> words;
  for (int i = 5; i < 50; ++i) words.push_back("w" + std::to_string(i));
  return word_vocabulary(words);
}

Sentence toy_sentence(std::initializer_list<int> ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) words.push_back("w" + std::to_string(id));
  return make_sentence(words, vocab);
}

Document random_doc(Rng& rng, const Vocabulary& vocab, std::size_t max_sentences = 12) {
  Document d;
  d.id = "r" + std::to_string(rng.next_u64() % 100000);
  const std::size_t n = 1 + rng.index(max_sentences);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> words(1 + rng.index(6));
    for (auto& w : words) w = "w" + std::to_string(5 + rng.index(45));
    d.sentences.push_back(make_sentence(words, vocab));
    if (i + 1 < n && rng.uniform() < 0.3) d.boundaries.push_back(i);
  }
  return d;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::size_t total_sentences(const std::vector<Document>& docs) {
  std::size_t n = 0;
  for (const auto& d : docs) n += d.size();
  return n;
}

}  // namespace

TEST_CASE("cross-segment layout example") {
  const Vocabulary vocab = toy_vocab();
  Document doc{"d", {toy_sentence({5, 6}, vocab), toy_sentence({7}, vocab)}, {}};
  const auto ex = extract_cross_segment(doc, 3, 3, vocab);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].input_ids == std::vector<TokenId>{2, 0, 5, 6, 3, 7, 0, 0});
  CHECK(ex[0].attention_mask == std::vector<std::uint8_t>{1, 0, 1, 1, 1, 1, 0, 0});
  CHECK(ex[0].segment_ids == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 1, 1});
  CHECK(ex[0].label == 0);
  CHECK(ex[0].key() == "d:0");
}

TEST_CASE("cross-segment length and counts") {
  const Vocabulary vocab = toy_vocab();
  Document doc{"d", {}, {1}};
  for (int i = 0; i < 4; ++i) doc.sentences.push_back(toy_sentence({5, 6, 7}, vocab));
  auto ex = extract_cross_segment(doc, 255, 255, vocab);
  CHECK(ex.size() == 3);
  for (const auto& e : ex) CHECK(e.input_ids.size() == 512);
  CHECK(ex[1].label == 1);
  CHECK(extract_cross_segment(Document{"one", {toy_sentence({5}, vocab)}, {}}, 4, 4, vocab).empty());
  CHECK_THROWS_AS(extract_cross_segment(doc, 0, 4, vocab), InvalidArgument);
  CHECK_THROWS_AS(extract_cross_segment(doc, 256, 4, vocab), InvalidArgument);
  CHECK_NOTHROW(extract_cross_segment(doc, 4, 0, vocab));
}

TEST_CASE("cross-segment invariants on random documents") {
  const Vocabulary vocab = toy_vocab();
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    Document doc = random_doc(rng, vocab);
    const std::size_t n = 1 + rng.index(10);
    const std::size_t m = rng.index(10);
    const auto ex = extract_cross_segment(doc, n, m, vocab);
    REQUIRE(ex.size() == (doc.size() > 0 ? doc.size() - 1 : 0));
    std::size_t positives = 0;
    std::vector<TokenId> flat;
    std::vector<std::size_t> ends;
    for (const auto& s : doc.sentences) {
      flat.insert(flat.end(), s.pieces.begin(), s.pieces.end());
      ends.push_back(flat.size());
    }
    for (const auto& e : ex) {
      positives += e.label;
      REQUIRE(e.input_ids.size() == n + m + 2);
      CHECK(e.input_ids[0] == vocab.cls_id());
      CHECK(e.input_ids[n + 1] == vocab.sep_id());
      for (std::size_t i = 0; i < e.input_ids.size(); ++i) {
        if (e.attention_mask[i] == 0) CHECK(e.input_ids[i] == vocab.pad_id());
        CHECK(e.segment_ids[i] == (i >= n + 2 ? 1 : 0));
      }
      // real tokens reproduce the text around the break
      std::vector<TokenId> left, right;
      for (std::size_t i = 1; i <= n; ++i) {
        if (e.attention_mask[i]) left.push_back(e.input_ids[i]);
      }
      for (std::size_t i = n + 2; i < n + m + 2; ++i) {
        if (e.attention_mask[i]) right.push_back(e.input_ids[i]);
      }
      const std::size_t cut = ends[e.position];
      const std::size_t lb = cut > n ? cut - n : 0;
      CHECK(left == std::vector<TokenId>(flat.begin() + lb, flat.begin() + cut));
      CHECK(right == std::vector<TokenId>(flat.begin() + cut, flat.begin() + std::min(flat.size(), cut + m)));
    }
    CHECK(positives == doc.boundaries.size());
  }
}

TEST_CASE("discourse examples follow EDU starts") {
  const Vocabulary vocab = load_vocab(testing::data_dir() / "uncased_vocab.txt");
  DiscourseSentence sent;
  sent.id = "fig";
  std::istringstream words("Annuities are rarely a good idea at the age 35 because of withdrawal restrictions");
  for (std::string w; words >> w;) sent.words.push_back(w);
  sent.edu_starts = {10};
  validate(sent);
  const auto ex = extract_discourse_examples(sent, 8, 8, vocab);
  REQUIRE(ex.size() == sent.words.size() - 1);
  for (const auto& e : ex) {
    // break after word e.position, i.e. before word e.position + 1
    CHECK(e.label == (sent.words[e.position + 1] == "because" ? 1 : 0));
  }
  // short left context is padded
  CHECK(ex[0].attention_mask[1] == 0);
  CHECK(ex[0].input_ids[1] == vocab.pad_id());
  DiscourseSentence single{"s", {"word"}, {}};
  CHECK(extract_discourse_examples(single, 4, 4, vocab).empty());
}

TEST_CASE("chunking") {
  const Vocabulary vocab = toy_vocab();
  Document doc{"big", {}, {}};
  for (int i = 0; i < 300; ++i) doc.sentences.push_back(toy_sentence({5 + i % 40}, vocab));
  doc.boundaries = {5, 127, 128, 200, 255, 298};
  const auto chunks = chunk_document(doc, 128);
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].size() == 128);
  CHECK(chunks[1].size() == 128);
  CHECK(chunks[2].size() == 44);
  CHECK(chunks[0].boundaries == std::vector<std::size_t>{5});
  CHECK(chunks[1].boundaries == std::vector<std::size_t>{0, 72});
  CHECK(chunks[2].boundaries == std::vector<std::size_t>{42});
  CHECK(chunks[1].id == "big#1");

  Document small{"s", {}, {3, 100}};
  for (int i = 0; i < 128; ++i) small.sentences.push_back(toy_sentence({5}, vocab));
  const auto one = chunk_document(small, 128);
  REQUIRE(one.size() == 1);
  CHECK(one[0].boundaries == small.boundaries);
  CHECK(one[0].sentences == small.sentences);
}

TEST_CASE("chunking matches a brute-force relabelling") {
  const Vocabulary vocab = toy_vocab();
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    Document doc = random_doc(rng, vocab, 40);
    const std::size_t size = 1 + rng.index(12);
    const auto chunks = chunk_document(doc, size);
    std::vector<Sentence> joined;
    std::size_t base = 0;
    for (const auto& c : chunks) {
      CHECK(c.size() <= size);
      for (std::size_t i = 0; i < c.size(); ++i) {
        const std::size_t original = base + i;
        const bool is_boundary = std::find(doc.boundaries.begin(), doc.boundaries.end(), original) != doc.boundaries.end();
        const bool expect = is_boundary && i + 1 < c.size();
        const bool got = std::find(c.boundaries.begin(), c.boundaries.end(), i) != c.boundaries.end();
        CHECK(got == expect);
      }
      joined.insert(joined.end(), c.sentences.begin(), c.sentences.end());
      base += c.size();
    }
    CHECK(joined == doc.sentences);
  }
}

TEST_CASE("sentence truncation") {
  std::vector<TokenId> exact(64, 7);
  exact[0] = 2;
  CHECK(truncate_sentence(exact, 2) == exact);
  std::vector<TokenId> longer(100, 9);
  longer[0] = 2;
  const auto cut = truncate_sentence(longer, 2);
  CHECK(cut.size() == 64);
  CHECK(cut[0] == 2);
  CHECK(truncate_sentence({}, 2) == std::vector<TokenId>{2});
  CHECK(truncate_sentence({8, 9}, 2) == std::vector<TokenId>{2, 8, 9});
}

TEST_CASE("frequency bag") {
  const Vocabulary vocab = toy_vocab();
  const std::size_t window = 8;
  CandidateExample ex;
  ex.input_ids.assign(2 * window + 2, 0);
  ex.attention_mask.assign(2 * window + 2, 0);
  ex.segment_ids.assign(2 * window + 2, 0);
  ex.input_ids[0] = vocab.cls_id();
  ex.input_ids[window + 1] = vocab.sep_id();
  const std::vector<TokenId> left{7, 2, 9, 7, 7, 2, 7};  // 7x4, 9x1, 2x2
  for (std::size_t i = 0; i < left.size(); ++i) {
    ex.input_ids[2 + i] = left[i];
    ex.attention_mask[2 + i] = 1;
  }
  const std::vector<TokenId> right{11, 12};
  for (std::size_t i = 0; i < right.size(); ++i) {
    ex.input_ids[window + 2 + i] = right[i];
    ex.attention_mask[window + 2 + i] = 1;
  }
  const auto bag = frequency_bag_transform(ex, vocab, window, 2);
  CHECK(bag.input_ids == std::vector<TokenId>{vocab.cls_id(), 2, 7, vocab.sep_id(), 11, 12});
  const auto wide = frequency_bag_transform(ex, vocab, window, 4);
  CHECK(wide.input_ids == std::vector<TokenId>{vocab.cls_id(), 0, 2, 7, 9, vocab.sep_id(), 11, 12, 0, 0});
  CHECK(wide.attention_mask == std::vector<std::uint8_t>{1, 0, 1, 1, 1, 1, 1, 1, 0, 0});

  // order-free: permuting a side leaves the result unchanged
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    CandidateExample shuffled = ex;
    std::vector<std::size_t> slots;
    for (std::size_t i = 1; i <= window; ++i) slots.push_back(i);
    std::vector<std::pair<TokenId, std::uint8_t>> content;
    for (auto s : slots) content.emplace_back(ex.input_ids[s], ex.attention_mask[s]);
    rng.shuffle(std::span(content));
    for (std::size_t i = 0; i < slots.size(); ++i) {
      shuffled.input_ids[slots[i]] = content[i].first;
      shuffled.attention_mask[slots[i]] = content[i].second;
    }
    CHECK(frequency_bag_transform(shuffled, vocab, window, 2) == bag);
  }
  CHECK_THROWS_AS(frequency_bag_transform(ex, vocab, 16, 2), ShapeError);
}

TEST_CASE("choi-style generation") {
  ClusterPoolConfig pc;
  pc.num_docs = 60;
  pc.seed = 4;
  const SyntheticCorpus pool = generate_cluster_pool(pc);
  ChoiConfig cc;
  cc.count = 200;
  cc.seed = 7;
  const auto docs = generate_choi_style(pool.docs, cc);
  REQUIRE(docs.size() == 200);
  std::size_t segments = 0;
  for (const auto& d : docs) {
    CHECK(d.boundaries.size() == 9);
    segments += d.boundaries.size() + 1;
    Document copy = d;
    CHECK_NOTHROW(validate(copy));
    // segment lengths in [3, 11]
    std::size_t prev = 0;
    for (std::size_t i = 0; i <= d.boundaries.size(); ++i) {
      const std::size_t end = i < d.boundaries.size() ? d.boundaries[i] + 1 : d.size();
      CHECK(end - prev >= 3);
      CHECK(end - prev <= 11);
      prev = end;
    }
  }
  CHECK(segments == 2000);
  CHECK(generate_choi_style(pool.docs, cc) == docs);
  CHECK_THROWS_AS(generate_choi_style({}, cc), InvalidArgument);

  const auto dir = testing::scratch_dir("choi");
  ChoiConfig other = cc;
  other.seed = 8;
  const auto docs2 = generate_choi_style(pool.docs, other);
  CHECK(total_sentences(docs) >= 1000);
  export_jsonl(docs, dir / "a.jsonl");
  export_jsonl(docs2, dir / "b.jsonl");
  CHECK(read_file(dir / "a.jsonl") != read_file(dir / "b.jsonl"));

  ChoiConfig prefix = cc;
  prefix.prefix_only = true;
  prefix.count = 5;
  for (const auto& d : generate_choi_style(pool.docs, prefix)) {
    // first sentence of each segment is the first sentence of some pool document
    CHECK(std::any_of(pool.docs.begin(), pool.docs.end(),
                      [&](const Document& p) { return p.sentences[0] == d.sentences[0]; }));
  }
}

TEST_CASE("topic generation") {
  TopicConfig tc;
  tc.num_topics = 2;
  tc.count = 40;
  tc.seed = 9;
  const SyntheticCorpus corpus = generate_topic_synthetic(tc);
  REQUIRE(corpus.docs.size() == 40);
  for (const auto& d : corpus.docs) {
    std::size_t prev = 0;
    std::vector<std::set<TokenId>> segs;
    for (std::size_t i = 0; i <= d.boundaries.size(); ++i) {
      const std::size_t end = i < d.boundaries.size() ? d.boundaries[i] + 1 : d.size();
      std::set<TokenId> ids;
      for (std::size_t s = prev; s < end; ++s) ids.insert(d.sentences[s].pieces.begin(), d.sentences[s].pieces.end());
      segs.push_back(ids);
      prev = end;
    }
    for (std::size_t i = 1; i < segs.size(); ++i) {
      std::vector<TokenId> common;
      std::set_intersection(segs[i - 1].begin(), segs[i - 1].end(), segs[i].begin(), segs[i].end(),
                            std::back_inserter(common));
      CHECK(common.empty());
    }
    for (const auto& s : d.sentences) {
      CHECK(std::find(s.pieces.begin(), s.pieces.end(), corpus.vocab.unk_id()) == s.pieces.end());
    }
  }
  TopicConfig fixed = tc;
  fixed.segment_len = {4, 4};
  for (const auto& d : generate_topic_synthetic(fixed).docs) {
    CHECK(d.size() % 4 == 0);
    for (std::size_t i = 0; i < d.boundaries.size(); ++i) CHECK(d.boundaries[i] == 4 * i + 3);
  }
  CHECK(generate_topic_synthetic(tc).docs == corpus.docs);
  TopicConfig big = tc;
  big.count = 300;
  const auto a = generate_topic_synthetic(big);
  big.seed = 10;
  const auto b = generate_topic_synthetic(big);
  CHECK(total_sentences(a.docs) >= 1000);
  CHECK(a.docs != b.docs);
  TopicConfig bad = tc;
  bad.num_topics = 1;
  CHECK_THROWS_AS(generate_topic_synthetic(bad), InvalidArgument);
}

TEST_CASE("jsonl ingestion") {
  const Vocabulary vocab = toy_vocab();
  const auto dir = testing::scratch_dir("jsonl");
  write_file(dir / "empty.jsonl", "");
  CHECK(ingest_jsonl(dir / "empty.jsonl", UnitMode::kDocument, vocab).size() == 0);

  write_file(dir / "final.jsonl", R"({"id": "a", "sentences": [["w5"], ["w6"]], "boundaries": [1]})" "\n");
  CHECK_THROWS_AS(ingest_jsonl(dir / "final.jsonl", UnitMode::kDocument, vocab), FormatError);

  write_file(dir / "bad.jsonl",
             R"({"id": "a", "sentences": [["w5"], ["w6"]], "boundaries": [0]})" "\n" R"({"id": "b", "sentences": )" "\n");
  try {
    ingest_jsonl(dir / "bad.jsonl", UnitMode::kDocument, vocab);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_jsonl(dir / "missing.jsonl", UnitMode::kDocument, vocab), IoError);

  Rng rng(5);
  Dataset docs;
  for (int i = 0; i < 20; ++i) docs.docs.push_back(random_doc(rng, vocab));
  export_jsonl(docs, dir / "docs.jsonl");
  CHECK(ingest_jsonl(dir / "docs.jsonl", UnitMode::kDocument, vocab).docs == docs.docs);

  Dataset disc;
  disc.mode = UnitMode::kDiscourse;
  disc.sentences.push_back({"s0", {"w5", "w6", "w7"}, {1, 2}});
  disc.sentences.push_back({"s1", {"w8"}, {}});
  export_jsonl(disc, dir / "disc.jsonl");
  CHECK(ingest_jsonl(dir / "disc.jsonl", UnitMode::kDiscourse, vocab).sentences == disc.sentences);
  write_file(dir / "disc_bad.jsonl", R"({"id": "s", "words": ["w5", "w6"], "edu_starts": [0]})" "\n");
  CHECK_THROWS_AS(ingest_jsonl(dir / "disc_bad.jsonl", UnitMode::kDiscourse, vocab), FormatError);

  const auto as_docs = disc.as_documents(vocab);
  CHECK(as_docs[0].boundaries == std::vector<std::size_t>{0, 1});
  CHECK(as_docs[0].size() == 3);
}

TEST_CASE("section text ingestion") {
  const Vocabulary vocab = toy_vocab();
  const auto dir = testing::scratch_dir("section");
  std::string text = "======== intro\n";
  for (int i = 0; i < 4; ++i) text += "w5 w6\n";
  text += "======== body\n";
  for (int i = 0; i < 6; ++i) text += "w7\n";
  write_file(dir / "doc.txt", text);
  const Document doc = ingest_section_text(dir / "doc.txt", vocab);
  CHECK(doc.size() == 10);
  CHECK(doc.boundaries == std::vector<std::size_t>{3});
  CHECK(doc.id == "doc");

  write_file(dir / "plain.txt", "w5\nw6\n\nw7\n");
  CHECK(ingest_section_text(dir / "plain.txt", vocab).boundaries.empty());
  write_file(dir / "empty.txt", "======== only\n");
  CHECK_THROWS_AS(ingest_section_text(dir / "empty.txt", vocab), FormatError);
  write_file(dir / "custom.txt", "w5\n## x\nw6\n");
  CHECK(ingest_section_text(dir / "custom.txt", vocab, "##").boundaries == std::vector<std::size_t>{0});
}

TEST_CASE("k-fold split") {
  const auto folds = kfold_split(347, 10, 1);
  REQUIRE(folds.size() == 10);
  std::map<std::size_t, int> sizes;
  std::vector<std::size_t> all;
  for (const auto& f : folds) {
    ++sizes[f.validation.size()];
    CHECK(f.train.size() + f.validation.size() == 347);
    all.insert(all.end(), f.validation.begin(), f.validation.end());
    std::vector<std::size_t> overlap;
    std::set_intersection(f.train.begin(), f.train.end(), f.validation.begin(), f.validation.end(),
                          std::back_inserter(overlap));
    CHECK(overlap.empty());
  }
  CHECK(sizes == std::map<std::size_t, int>{{34, 3}, {35, 7}});
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  CHECK(kfold_split(347, 10, 1)[3].validation == folds[3].validation);
  CHECK(kfold_split(347, 10, 2)[3].validation != folds[3].validation);
  CHECK_THROWS_AS(kfold_split(5, 10, 1), InvalidArgument);
}

TEST_CASE("merging sentences crossed by EDUs") {
  const std::vector<std::vector<std::string>> sents{{"a", "b"}, {"c", "d"}, {"e", "f"}, {"g"}};
  // EDUs inside sentences: no merge
  auto out = merge_overlapping_edu_sentences(sents, {{0, 1}, {1, 2}, {2, 4}, {4, 6}, {6, 7}}, "x");
  REQUIRE(out.size() == 4);
  CHECK(out[0].edu_starts == std::vector<std::size_t>{1});
  CHECK(out[1].edu_starts.empty());
  // EDU [1,3) spans sentences 0 and 1
  out = merge_overlapping_edu_sentences(sents, {{0, 1}, {1, 3}, {3, 4}, {4, 7}}, "x");
  REQUIRE(out.size() == 2);
  CHECK(out[0].words == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(out[0].edu_starts == std::vector<std::size_t>{1, 3});
  CHECK(out[1].words == std::vector<std::string>{"e", "f", "g"});
  CHECK(out[1].edu_starts.empty());
  // chain: [1,3) joins 0-1, [3,5) joins 1-2
  out = merge_overlapping_edu_sentences(sents, {{0, 1}, {1, 3}, {3, 5}, {5, 7}}, "x");
  REQUIRE(out.size() == 1);
  CHECK(out[0].words.size() == 7);
  CHECK(out[0].edu_starts == std::vector<std::size_t>{1, 3, 5});
  CHECK(out[0].id == "x:0");
}
