#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "segkit/grad_check.hpp"
#include "segkit/models.hpp"
#include "segkit/ops.hpp"

using namespace segkit;

namespace {

ModelConfig tiny(Arch arch, std::size_t vocab = 40) {
  ModelConfig c;
  c.arch = arch;
  c.encoder.layers = 2;
  c.encoder.hidden = 16;
  c.encoder.heads = 2;
  c.encoder.vocab = vocab;
  c.encoder.max_positions = 32;
  c.context_left = 3;
  c.context_right = 2;
  c.lstm_hidden = 6;
  c.doc_positions = 8;
  c.max_sentence_tokens = 8;
  return c;
}

Sentence sentence(std::vector<TokenId> pieces) {
  Sentence s;
  s.pieces = std::move(pieces);
  s.words.assign(1, "w");
  s.word_starts = {0};
  return s;
}

Document chunk_of(std::vector<std::vector<TokenId>> units, std::vector<std::size_t> boundaries = {}) {
  Document d;
  d.id = "d";
  for (auto& u : units) d.sentences.push_back(sentence(std::move(u)));
  d.boundaries = std::move(boundaries);
  return d;
}

CandidateExample example(std::vector<TokenId> ids) {
  CandidateExample ex;
  ex.segment_ids.assign(ids.size(), 0);
  for (std::size_t i = 4; i < ids.size(); ++i) ex.segment_ids[i] = 1;
  ex.attention_mask.assign(ids.size(), 1);
  ex.input_ids = std::move(ids);
  ex.doc_id = "d";
  return ex;
}

template <typename T>
Parameter<T>& named(SegmentationModel<T>& m, const std::string& name) {
  for (auto& p : m.params()) {
    if (p.name == name) return p;
  }
  FAIL("no parameter " << name);
  return *m.params().begin();
}

std::vector<double> row(const Tensor<double>& t, std::size_t r) {
  const std::size_t w = t.shape()[1];
  return {t.buffer().begin() + r * w, t.buffer().begin() + (r + 1) * w};
}

}  // namespace

TEST_CASE("encoder names round-trip") {
  EncoderConfig c = parse_encoder_name("L12-H768-A12");
  CHECK(c.layers == 12);
  CHECK(c.hidden == 768);
  CHECK(c.heads == 12);
  CHECK(encoder_name(c) == "L12-H768-A12");
  CHECK_THROWS_AS(parse_encoder_name("L12-H768"), InvalidArgument);
  CHECK_THROWS_AS(parse_encoder_name("L2-H10-A3"), InvalidArgument);
  CHECK_THROWS_AS(parse_encoder_name("L2-H16-A2x"), InvalidArgument);
}

TEST_CASE("parameter counts match the published encoder sizes") {
  // name, published count; all but the 6M row are within 5% (see the acceptance run)
  const std::vector<std::pair<std::string, double>> rows{
      {"L24-H1024-A16", 336e6}, {"L12-H768-A12", 110e6}, {"L12-H512-A8", 54e6},
      {"L12-H256-A8", 17e6},    {"L6-H256-A8", 13e6},    {"L4-H256-A4", 11e6},
      {"L6-H128-A8", 5e6},      {"L12-H64-A8", 2.6e6}};
  for (const auto& [name, published] : rows) {
    const double n = static_cast<double>(count_parameters(parse_encoder_name(name)));
    INFO(name << " " << n);
    CHECK(std::fabs(n - published) / published <= 0.05);
  }
  // hand count for L1-H4-A1, vocab 10, 6 positions, 2 types, ff 16
  EncoderConfig e;
  e.layers = 1;
  e.hidden = 4;
  e.heads = 1;
  e.vocab = 10;
  e.max_positions = 6;
  // embeddings 40+24+8, emb LN 8, attention 4*(16+4) = 80, LN 8, ffn 64+16+64+4 = 148, LN 8, classifier 8+2
  CHECK(count_parameters(e) == 40 + 24 + 8 + 8 + 80 + 8 + 148 + 8 + 10);
}

TEST_CASE("parameter counts agree with constructed models") {
  for (Arch arch : {Arch::kCross, Arch::kBiLstm, Arch::kHier}) {
    for (bool positions : {true, false}) {
      ModelConfig c = tiny(arch);
      c.encoder.use_positions = positions;
      c.encoder.use_types = !positions;
      c.doc_layers = 1;
      SegmentationModel<float> m(c, 1);
      INFO(to_string(arch) << " positions " << positions);
      CHECK(m.params().scalar_count() == count_parameters(c));
    }
  }
}

TEST_CASE("initialisation: truncated weights, zero biases, unit gains") {
  SegmentationModel<float> m(tiny(Arch::kHier), 3);
  for (const auto& p : m.params()) {
    const bool bias = p.name.ends_with("bias") || p.name.ends_with("beta");
    const bool gain = p.name.ends_with("gamma");
    CHECK(p.decay == !(bias || gain));
    for (float x : p.value.buffer()) {
      if (bias) CHECK(x == 0.0f);
      else if (gain) CHECK(x == 1.0f);
      else CHECK(std::fabs(x) <= 0.04f);
    }
  }
  SegmentationModel<float> again(tiny(Arch::kHier), 3);
  CHECK(again.params()[0].value.buffer() == m.params()[0].value.buffer());
}

TEST_CASE("config validation") {
  ModelConfig c = tiny(Arch::kCross);
  c.context_left = 0;
  CHECK_THROWS_AS(SegmentationModel<float>(c, 0), InvalidArgument);
  c = tiny(Arch::kCross);
  c.context_right = 256;
  CHECK_THROWS_AS(SegmentationModel<float>(c, 0), InvalidArgument);
  c = tiny(Arch::kCross);
  c.encoder.heads = 3;
  CHECK_THROWS_AS(SegmentationModel<float>(c, 0), InvalidArgument);
  CHECK(parse_arch("hier") == Arch::kHier);
  CHECK_THROWS_AS(parse_arch("gru"), InvalidArgument);
}

TEST_CASE("encoder output shape and sequence limits") {
  SegmentationModel<double> m(tiny(Arch::kCross), 5);
  Tape<double> tape(false);
  PackedInput in;
  in.add(std::vector<TokenId>{2, 7, 8, 3});
  in.add(std::vector<TokenId>{2, 9});
  Var<double> h = m.encode(tape, in, nullptr);
  CHECK(h.shape() == Shape{6, 16});
  PackedInput too_long;
  too_long.add(std::vector<TokenId>(33, 5));
  CHECK_THROWS_AS(m.encode(tape, too_long, nullptr), InvalidArgument);
}

TEST_CASE("packed sequences do not see each other") {
  SegmentationModel<double> m(tiny(Arch::kCross), 5);
  Tape<double> tape(false);
  PackedInput a;
  a.add(std::vector<TokenId>{2, 7, 8, 3});
  PackedInput ab = a;
  ab.add(std::vector<TokenId>{2, 11, 12});
  const Tensor<double> alone = m.encode(tape, a, nullptr).value();
  const Tensor<double> packed = m.encode(tape, ab, nullptr).value();
  for (std::size_t r = 0; r < 4; ++r) CHECK(row(alone, r) == row(packed, r));
}

TEST_CASE("without positions and types the encoder is permutation-equivariant") {
  ModelConfig c = tiny(Arch::kCross);
  c.encoder.use_positions = false;
  c.encoder.use_types = false;
  SegmentationModel<double> m(c, 8);
  const std::vector<TokenId> ids{2, 5, 9, 13, 17, 3};
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<TokenId> permuted(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) permuted[i] = ids[perm[i]];
  Tape<double> tape(false);
  PackedInput x, y;
  x.add(ids);
  y.add(permuted);
  const Tensor<double> hx = m.encode(tape, x, nullptr).value();
  const Tensor<double> hy = m.encode(tape, y, nullptr).value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto a = row(hy, i), b = row(hx, perm[i]);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-10));
  }
}

TEST_CASE("content under padding does not affect the output") {
  SegmentationModel<double> m(tiny(Arch::kCross), 9);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenId> ids(8);
    std::vector<std::uint8_t> mask(8), types(8);
    for (std::size_t i = 0; i < 8; ++i) {
      ids[i] = static_cast<TokenId>(rng.index(40));
      mask[i] = rng.uniform() < 0.6 ? 1 : 0;
      types[i] = i >= 4 ? 1 : 0;
    }
    mask[0] = 1;
    std::vector<TokenId> other = ids;
    for (std::size_t i = 0; i < 8; ++i) {
      if (mask[i] == 0) other[i] = static_cast<TokenId>(rng.index(40));
    }
    Tape<double> tape(false);
    PackedInput a, b;
    a.add(ids, types, mask);
    b.add(other, types, mask);
    CHECK(m.encode(tape, a, nullptr).value().buffer() == m.encode(tape, b, nullptr).value().buffer());
  }
}

TEST_CASE("cross-segment logits") {
  SegmentationModel<double> m(tiny(Arch::kCross), 2);
  const CandidateExample e1 = example({2, 0, 7, 8, 3, 9, 10});
  const CandidateExample e2 = example({2, 5, 6, 7, 3, 11, 0});
  std::vector<const CandidateExample*> batch{&e1, &e2};
  Tape<double> tape(false);
  const Tensor<double> both = m.example_logits(tape, batch, nullptr).value();
  CHECK(both.shape() == Shape{2, 2});
  std::vector<const CandidateExample*> one{&e2};
  const Tensor<double> single = m.example_logits(tape, one, nullptr).value();
  CHECK(row(single, 0) == row(both, 1));

  const CandidateExample bad = example({2, 7, 3});
  std::vector<const CandidateExample*> wrong{&bad};
  CHECK_THROWS_AS(m.example_logits(tape, wrong, nullptr), InvalidArgument);

  named(m, "classifier.weight").value.fill(0.0);
  CHECK(m.example_logits(tape, batch, nullptr).value().buffer() == std::vector<double>(4, 0.0));
}

TEST_CASE("unit logits shapes and limits") {
  for (Arch arch : {Arch::kBiLstm, Arch::kHier}) {
    SegmentationModel<double> m(tiny(arch), 6);
    std::vector<std::vector<TokenId>> units;
    for (int i = 0; i < 7; ++i) units.push_back({static_cast<TokenId>(5 + i), 9});
    const Document c = chunk_of(units, {2});
    std::vector<const Document*> chunks{&c};
    Tape<double> tape(false);
    CHECK(m.unit_logits(tape, chunks, nullptr).shape() == Shape{7, 2});
    CHECK(m.break_logits(tape, chunks, nullptr).shape() == Shape{6, 2});

    units.resize(9, {5});
    const Document long_chunk = chunk_of(units);
    std::vector<const Document*> too_many{&long_chunk};
    CHECK_THROWS_AS(m.unit_logits(tape, too_many, nullptr), InvalidArgument);
    const Document long_sentence = chunk_of({{5, 6, 7, 8, 9, 10, 11, 12}});
    std::vector<const Document*> too_long{&long_sentence};
    CHECK_THROWS_AS(m.unit_logits(tape, too_long, nullptr), InvalidArgument);

    // chunks are independent
    const Document c2 = chunk_of({{7}, {8, 9}, {10}});
    std::vector<const Document*> two{&c, &c2}, second{&c2};
    const Tensor<double> both = m.unit_logits(tape, two, nullptr).value();
    const Tensor<double> alone = m.unit_logits(tape, second, nullptr).value();
    for (std::size_t r = 0; r < 3; ++r) {
      const auto a = row(both, 7 + r), b = row(alone, r);
      for (std::size_t j = 0; j < 2; ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("document-mode unit vectors are sentence [CLS] rows") {
  SegmentationModel<double> m(tiny(Arch::kBiLstm), 6);
  const Document c = chunk_of({{5, 6}, {7, 8, 9}});
  std::vector<const Document*> chunks{&c};
  Tape<double> tape(false);
  std::vector<std::size_t> counts;
  const Tensor<double> u = m.unit_vectors(tape, chunks, nullptr, counts).value();
  CHECK(counts == std::vector<std::size_t>{2});
  PackedInput in;
  in.add(std::vector<TokenId>{2, 7, 8, 9});
  CHECK(row(u, 1) == row(m.encode(tape, in, nullptr).value(), 0));
}

TEST_CASE("discourse mode picks the left-most piece of each word") {
  // pieces [the][un][##aff][##able], two words starting at pieces 0 and 1
  ModelConfig c = tiny(Arch::kBiLstm);
  c.mode = UnitMode::kDiscourse;
  SegmentationModel<double> m(c, 6);
  const TokenId the = 10, un = 11, aff = 12, able = 13;
  const Document words = chunk_of({{the}, {un, aff, able}});
  std::vector<const Document*> chunks{&words};
  Tape<double> tape(false);
  std::vector<std::size_t> counts;
  const Tensor<double> u = m.unit_vectors(tape, chunks, nullptr, counts).value();
  PackedInput in;
  in.add(std::vector<TokenId>{c.cls_id, the, un, aff, able});
  const Tensor<double> h = m.encode(tape, in, nullptr).value();
  // rows 0 and 1 of the per-piece output sit after [CLS]
  CHECK(row(u, 0) == row(h, 1));
  CHECK(row(u, 1) == row(h, 2));
  CHECK(m.unit_logits(tape, chunks, nullptr).shape() == Shape{2, 2});
  CHECK(m.break_row(0) == 1);
}

TEST_CASE("hierarchical document encoder without positions is permutation-equivariant over sentences") {
  ModelConfig c = tiny(Arch::kHier);
  c.encoder.use_positions = false;
  SegmentationModel<double> m(c, 12);
  const std::vector<std::vector<TokenId>> s{{5, 6}, {7}, {8, 9, 10}, {11, 12}};
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::vector<TokenId>> p;
  for (std::size_t i : perm) p.push_back(s[i]);
  const Document a = chunk_of(s), b = chunk_of(p);
  std::vector<const Document*> ca{&a}, cb{&b};
  Tape<double> tape(false);
  const Tensor<double> la = m.unit_logits(tape, ca, nullptr).value();
  const Tensor<double> lb = m.unit_logits(tape, cb, nullptr).value();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto x = row(lb, i), y = row(la, perm[i]);
    for (std::size_t j = 0; j < 2; ++j) CHECK(x[j] == doctest::Approx(y[j]).epsilon(1e-10));
  }
}

TEST_CASE("end-to-end gradients of every architecture") {
  const CandidateExample e1 = example({2, 0, 7, 8, 3, 9, 10});
  const CandidateExample e2 = example({2, 5, 6, 7, 3, 11, 0});
  const std::vector<int> labels{1, 0};
  for (Arch arch : {Arch::kCross, Arch::kBiLstm, Arch::kHier}) {
    for (UnitMode mode : {UnitMode::kDocument, UnitMode::kDiscourse}) {
      if (arch == Arch::kCross && mode == UnitMode::kDiscourse) continue;
      ModelConfig c = tiny(arch);
      c.mode = mode;
      SegmentationModel<double> m(c, 21);
      const Document d = chunk_of({{5, 6}, {7}, {8, 9, 10}}, {0});
      std::vector<const Document*> chunks{&d};
      std::vector<const CandidateExample*> batch{&e1, &e2};
      auto loss = [&](Tape<double>& tape) {
        Rng drop(77);  // same dropout masks on every evaluation
        if (arch == Arch::kCross) {
          return ops::cross_entropy(m.example_logits(tape, batch, &drop), std::span<const int>(labels));
        }
        return ops::cross_entropy(m.break_logits(tape, chunks, &drop), std::span<const int>(labels));
      };
      Rng pick(5);
      const GradCheckResult r = grad_check_params(loss, m.params(), 0.01, pick);
      INFO(to_string(arch) << " " << to_string(mode) << " worst " << r.worst_input << "[" << r.worst_index
                           << "] " << r.worst_analytic << " vs " << r.worst_numeric);
      CHECK(r.checked >= m.params().size());
      CHECK(r.max_rel_error < 1e-3);
    }
  }
}

TEST_CASE("float and double models agree") {
  SegmentationModel<float> f(tiny(Arch::kHier), 4);
  SegmentationModel<double> d = f.cast<double>();
  const Document c = chunk_of({{5, 6}, {7}, {8, 9, 10}});
  std::vector<const Document*> chunks{&c};
  Tape<float> tf(false);
  Tape<double> td(false);
  const Tensor<float> lf = f.unit_logits(tf, chunks, nullptr).value();
  const Tensor<double> ld = d.unit_logits(td, chunks, nullptr).value();
  for (std::size_t i = 0; i < lf.size(); ++i) CHECK(lf[i] == doctest::Approx(ld[i]).epsilon(1e-4));
}

TEST_CASE("prepare_chunks splits and truncates") {
  ModelConfig c = tiny(Arch::kBiLstm);
  Document d;
  d.id = "doc";
  for (int i = 0; i < 10; ++i) d.sentences.push_back(sentence(std::vector<TokenId>(12, 5)));
  d.boundaries = {3};
  const auto chunks = prepare_chunks(d, c);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].size() == 8);
  CHECK(chunks[1].size() == 2);
  CHECK(chunks[0].boundaries == std::vector<std::size_t>{3});
  for (const auto& ch : chunks) {
    for (const auto& s : ch.sentences) CHECK(s.pieces.size() == 7);
  }
}

TEST_CASE("checkpoints round-trip bitwise") {
  const auto dir = std::filesystem::temp_directory_path() / "segkit_ckpt_test";
  std::filesystem::remove_all(dir);
  for (Arch arch : {Arch::kCross, Arch::kBiLstm, Arch::kHier}) {
    ModelConfig c = tiny(arch);
    c.threshold = 0.35;
    c.encoder.dropout = 0.1;
    SegmentationModel<float> m(c, 13);
    save_checkpoint(m, dir);
    SegmentationModel<float> back = load_checkpoint<float>(dir);
    CHECK(config_text(back.config()) == config_text(m.config()));
    CHECK(back.config().threshold == 0.35);
    REQUIRE(back.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      CHECK(back.params()[i].name == m.params()[i].name);
      CHECK(back.params()[i].value.buffer() == m.params()[i].value.buffer());
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint errors") {
  const auto dir = std::filesystem::temp_directory_path() / "segkit_ckpt_errors";
  std::filesystem::remove_all(dir);
  SegmentationModel<float> m(tiny(Arch::kCross), 13);
  auto kind_of = [&]() {
    try {
      load_checkpoint<float>(dir);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  CHECK_THROWS_AS(load_checkpoint<float>(dir), IoError);

  save_checkpoint(m, dir);
  const auto weights = dir / "weights.bin";
  const auto size = std::filesystem::file_size(weights);
  std::filesystem::resize_file(weights, size - 3);
  CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::kTruncated));

  save_checkpoint(m, dir);
  {
    std::fstream f(weights, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::kBadMagic));

  // weights from a different hidden size
  ModelConfig wider = tiny(Arch::kCross);
  wider.encoder.hidden = 32;
  save_checkpoint(SegmentationModel<float>(wider, 1), dir);
  {
    std::ofstream f(dir / "config");
    f << config_text(m.config());
  }
  CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::kMismatch));

  {
    std::ofstream f(dir / "config");
    f << config_text(m.config()) << "colour=blue\n";
  }
  CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::kBadConfig));
  {
    std::ofstream f(dir / "config");
    f << "arch=cross\nL=2\n";
  }
  CHECK(kind_of() == static_cast<int>(CheckpointError::Kind::kBadConfig));
  std::filesystem::remove_all(dir);
}

TEST_CASE("double checkpoints load as float") {
  const auto dir = std::filesystem::temp_directory_path() / "segkit_ckpt_f64";
  SegmentationModel<double> m(tiny(Arch::kCross), 13);
  save_checkpoint(m, dir);
  SegmentationModel<float> f = load_checkpoint<float>(dir);
  CHECK(f.params()[0].value[0] == static_cast<float>(m.params()[0].value[0]));
  std::filesystem::remove_all(dir);
}
