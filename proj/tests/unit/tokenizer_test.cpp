#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "segkit/error.hpp"
#include "segkit/tokenizer.hpp"
#include "segkit/unicode.hpp"
#include "test_paths.hpp"

using segkit::Vocabulary;

namespace {

Vocabulary toy_vocab() {
  return Vocabulary::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "hello", ",",
                                  "world", "!", "un", "##aff", "##able", "cafe", "a", "##b"});
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

}  // namespace

TEST_CASE("load_vocab assigns ids by line and resolves specials") {
  auto dir = segkit::testing::scratch_dir("vocab");
  write_file(dir / "v.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nthe\n");
  auto vocab = segkit::load_vocab(dir / "v.txt");
  CHECK(vocab.size() == 6);
  CHECK(vocab.pad_id() == 0);
  CHECK(vocab.unk_id() == 1);
  CHECK(vocab.mask_id() == 4);
  CHECK(vocab.find("the") == 5);
}

TEST_CASE("load_vocab rejects bad files") {
  auto dir = segkit::testing::scratch_dir("vocab_bad");
  write_file(dir / "dup.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nthe\nthe\n");
  CHECK_THROWS_AS(segkit::load_vocab(dir / "dup.txt"), segkit::FormatError);
  write_file(dir / "nomask.txt", "[PAD]\n[UNK]\n[CLS]\n[SEP]\nthe\n");
  CHECK_THROWS_AS(segkit::load_vocab(dir / "nomask.txt"), segkit::FormatError);
  write_file(dir / "gap.txt", "[PAD]\n[UNK]\n\n[CLS]\n[SEP]\n[MASK]\n");
  CHECK_THROWS_AS(segkit::load_vocab(dir / "gap.txt"), segkit::FormatError);
  CHECK_THROWS_AS(segkit::load_vocab(dir / "missing.txt"), segkit::IoError);
}

TEST_CASE("reference uncased vocabulary has 30522 entries") {
  auto vocab = segkit::load_vocab(segkit::testing::data_dir() / "uncased_vocab.txt");
  CHECK(vocab.size() == 30522);
  CHECK(vocab.pad_id() == 0);
  CHECK(vocab.unk_id() == 100);
  CHECK(vocab.cls_id() == 101);
  CHECK(vocab.sep_id() == 102);
  CHECK(vocab.mask_id() == 103);
}

TEST_CASE("basic_tokenize lowercases, strips accents and splits punctuation") {
  using V = std::vector<std::string>;
  CHECK(segkit::basic_tokenize("Hello, world!") == V{"hello", ",", "world", "!"});
  CHECK(segkit::basic_tokenize("Café") == V{"cafe"});
  CHECK(segkit::basic_tokenize("   ").empty());
  CHECK(segkit::basic_tokenize("").empty());
  CHECK(segkit::basic_tokenize("北京ab") == V{"北", "京", "ab"});
  CHECK(segkit::basic_tokenize("a\x07" "b\tc") == V{"ab", "c"});
  CHECK(segkit::basic_tokenize("ΟΔΟΣ ΣΑ") == V{"οδος", "σα"});
}

TEST_CASE("basic_tokenize output is a fixed point") {
  for (const char* text : {"Hello, world!", "Ünïcödé  ÀÉÎ, naïve.", "北京 is 中国's capital",
                           "e\xcc\x81t\xc3\xa9 x\xc2\xa0y"}) {
    auto once = segkit::basic_tokenize(text);
    std::string joined;
    for (const auto& w : once) joined += (joined.empty() ? "" : " ") + w;
    CHECK(segkit::basic_tokenize(joined) == once);
  }
}

TEST_CASE("wordpiece greedy longest match") {
  using V = std::vector<std::string>;
  auto vocab = toy_vocab();
  CHECK(segkit::wordpiece("unaffable", vocab) == V{"un", "##aff", "##able"});
  CHECK(segkit::wordpiece("the", vocab) == V{"the"});
  CHECK(segkit::wordpiece("qzx", vocab) == V{"[UNK]"});
  CHECK(segkit::wordpiece("abbb", vocab) == V{"a", "##b", "##b", "##b"});
  CHECK(segkit::wordpiece("abbb", vocab, 3) == V{"[UNK]"});
}

TEST_CASE("encode returns ids and left-most piece indices") {
  auto vocab = toy_vocab();
  auto empty = segkit::encode("", vocab);
  CHECK(empty.ids.empty());
  CHECK(empty.word_starts.empty());

  auto hello = segkit::encode("Hello, world!", vocab);
  CHECK(hello.ids == std::vector<segkit::TokenId>{6, 7, 8, 9});
  CHECK(hello.word_starts == std::vector<std::size_t>{0, 1, 2, 3});

  auto un = segkit::encode("unaffable cafe", vocab);
  CHECK(un.ids == std::vector<segkit::TokenId>{10, 11, 12, 13});
  CHECK(un.word_starts == std::vector<std::size_t>{0, 3});
}

TEST_CASE("encode never emits out-of-range ids and avoids UNK when characters are covered") {
  auto vocab = toy_vocab();
  for (const char* text : {"ab", "abbbbb", "the the", "qq", ""}) {
    for (auto id : segkit::encode(text, vocab).ids) {
      CHECK(id >= 0);
      CHECK(static_cast<std::size_t>(id) < vocab.size());
    }
  }
  // Every character of "abbb" exists as a piece or continuation.
  for (auto id : segkit::encode("abbb", vocab).ids) CHECK(id != vocab.unk_id());
}

TEST_CASE("encode_words keeps one start per input word") {
  auto vocab = toy_vocab();
  std::vector<std::string> words{"Hello,", "unaffable", "\x07"};
  auto enc = segkit::encode_words(words, vocab);
  CHECK(enc.word_starts == std::vector<std::size_t>{0, 2, 5});
  CHECK(enc.ids.back() == vocab.unk_id());
}

TEST_CASE("unicode helpers") {
  using segkit::unicode::decode_utf8;
  CHECK(decode_utf8("\xff") == std::u32string(1, 0xFFFD));
  CHECK(decode_utf8("\xe2\x82") == std::u32string(2, 0xFFFD));
  CHECK(segkit::unicode::nfd(U"é") == U"é");
  CHECK(segkit::unicode::nfd(U"각") == U"각");
  CHECK(segkit::unicode::nfd(U"ạ́") == U"ạ́");
  CHECK(segkit::unicode::to_lower(U"İ") == U"i̇");
}

TEST_CASE("fixture corpus matches the reference trace line by line") {
  auto vocab = segkit::load_vocab(segkit::testing::data_dir() / "uncased_vocab.txt");
  std::ifstream fixture(segkit::testing::test_data_dir() / "tokenizer_fixture.txt", std::ios::binary);
  std::ifstream trace(segkit::testing::test_data_dir() / "tokenizer_trace.txt", std::ios::binary);
  REQUIRE(fixture);
  REQUIRE(trace);
  std::string input;
  std::string expected;
  int lines = 0;
  int mismatches = 0;
  while (std::getline(fixture, input)) {
    REQUIRE(std::getline(trace, expected));
    ++lines;
    auto got = segkit::tokenize_to_line(input, vocab);
    if (got != expected) {
      ++mismatches;
      if (mismatches <= 5) {
        MESSAGE("line " << lines << "\n  got:  " << got << "\n  want: " << expected);
      }
    }
  }
  CHECK(lines == 1000);
  CHECK(mismatches == 0);
}
