#include <algorithm>
#include <cstdio>

#include "segkit/models.hpp"
#include "segkit/ops.hpp"

namespace segkit {

void EncoderConfig::validate() const {
  if (layers == 0 || hidden == 0 || heads == 0 || vocab == 0 || max_positions == 0 || type_vocab == 0) {
    throw InvalidArgument("encoder " + encoder_name(*this) + ": sizes must be positive");
  }
  if (hidden % heads != 0) {
    throw InvalidArgument("encoder " + encoder_name(*this) + ": hidden size not divisible by heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1)");
}

std::string encoder_name(const EncoderConfig& c) {
  return "L" + std::to_string(c.layers) + "-H" + std::to_string(c.hidden) + "-A" + std::to_string(c.heads);
}

EncoderConfig parse_encoder_name(const std::string& name) {
  EncoderConfig c;
  std::size_t l = 0, h = 0, a = 0;
  char tail = 0;
  if (std::sscanf(name.c_str(), "L%zu-H%zu-A%zu%c", &l, &h, &a, &tail) != 3) {
    throw InvalidArgument("bad encoder name '" + name + "' (expected L<layers>-H<hidden>-A<heads>)");
  }
  c.layers = l;
  c.hidden = h;
  c.heads = a;
  c.validate();
  return c;
}

namespace {

std::size_t encoder_scalars(const EncoderConfig& c) {
  const std::size_t h = c.hidden;
  const std::size_t ff = c.ff_size();
  std::size_t n = c.vocab * h + 2 * h;
  if (c.use_positions) n += c.max_positions * h;
  if (c.use_types) n += c.type_vocab * h;
  const std::size_t layer = 4 * (h * h + h) + 4 * h + (h * ff + ff + ff * h + h);
  return n + c.layers * layer;
}

std::size_t layer_scalars(std::size_t h, std::size_t ff) { return 4 * (h * h + h) + 4 * h + (h * ff + ff + ff * h + h); }

}  // namespace

std::size_t count_parameters(const EncoderConfig& config) {
  return encoder_scalars(config) + 2 * config.hidden + 2;
}

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::kCross: return "cross";
    case Arch::kBiLstm: return "bilstm";
    case Arch::kHier: return "hier";
  }
  return "?";
}

Arch parse_arch(const std::string& text) {
  if (text == "cross") return Arch::kCross;
  if (text == "bilstm") return Arch::kBiLstm;
  if (text == "hier") return Arch::kHier;
  throw InvalidArgument("unknown architecture '" + text + "' (expected cross, bilstm or hier)");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (arch == Arch::kCross) {
    if (context_left < 1 || context_left > kMaxSideContext || context_right > kMaxSideContext) {
      throw InvalidArgument("context " + std::to_string(context_left) + "-" + std::to_string(context_right) +
                            " outside 1..255 left, 0..255 right");
    }
    if (context_left + context_right + 2 > encoder.max_positions) {
      throw InvalidArgument("context does not fit in " + std::to_string(encoder.max_positions) + " positions");
    }
  }
  if (arch == Arch::kBiLstm && lstm_hidden == 0) throw InvalidArgument("lstm hidden size must be positive");
  if (doc_positions == 0) throw InvalidArgument("document positions must be positive");
  if (max_sentence_tokens < 2) throw InvalidArgument("max sentence tokens must be at least 2");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must be in (0, 1)");
  if (cls_id < 0 || static_cast<std::size_t>(cls_id) >= encoder.vocab) throw InvalidArgument("cls id outside vocabulary");
}

std::size_t count_parameters(const ModelConfig& config) {
  const EncoderConfig& e = config.encoder;
  const std::size_t h = e.hidden;
  switch (config.arch) {
    case Arch::kCross:
      return count_parameters(e);
    case Arch::kBiLstm: {
      const std::size_t u = config.lstm_hidden;
      const std::size_t direction = h * 4 * u + u * 4 * u + 4 * u;
      return encoder_scalars(e) + 2 * direction + 2 * (2 * u) + 2;
    }
    case Arch::kHier: {
      std::size_t n = encoder_scalars(e) + 2 * h + config.document_layers() * layer_scalars(h, e.ff_size());
      if (e.use_positions) n += config.doc_positions * h;
      return n + 2 * h + 2;
    }
  }
  return 0;
}

void PackedInput::add(std::span<const TokenId> seq, std::span<const std::uint8_t> seq_types,
                      std::span<const std::uint8_t> seq_mask) {
  sequences.emplace_back(ids.size(), seq.size());
  ids.insert(ids.end(), seq.begin(), seq.end());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    types.push_back(seq_types.empty() ? 0 : seq_types[i]);
    mask.push_back(seq_mask.empty() ? 1 : seq_mask[i]);
  }
}

namespace {

template <typename T>
struct Builder {
  ParameterSet<T>& params;
  Rng& rng;

  std::size_t weight(const std::string& name, Shape shape) {
    Tensor<T> t(std::move(shape));
    for (auto& x : t.buffer()) x = static_cast<T>(rng.truncated_normal(0.02));
    return params.add(name, std::move(t), true);
  }
  std::size_t zeros(const std::string& name, std::size_t n) { return params.add(name, Tensor<T>(Shape{n}), false); }
  std::size_t ones(const std::string& name, std::size_t n) { return params.add(name, Tensor<T>(Shape{n}, T(1)), false); }

  LayerParams layer(const std::string& p, std::size_t h, std::size_t ff) {
    LayerParams l{};
    l.q_w = weight(p + ".attention.query.weight", {h, h});
    l.q_b = zeros(p + ".attention.query.bias", h);
    l.k_w = weight(p + ".attention.key.weight", {h, h});
    l.k_b = zeros(p + ".attention.key.bias", h);
    l.v_w = weight(p + ".attention.value.weight", {h, h});
    l.v_b = zeros(p + ".attention.value.bias", h);
    l.o_w = weight(p + ".attention.output.weight", {h, h});
    l.o_b = zeros(p + ".attention.output.bias", h);
    l.ln1_g = ones(p + ".attention.norm.gamma", h);
    l.ln1_b = zeros(p + ".attention.norm.beta", h);
    l.ff1_w = weight(p + ".ffn.inner.weight", {h, ff});
    l.ff1_b = zeros(p + ".ffn.inner.bias", ff);
    l.ff2_w = weight(p + ".ffn.outer.weight", {ff, h});
    l.ff2_b = zeros(p + ".ffn.outer.bias", h);
    l.ln2_g = ones(p + ".ffn.norm.gamma", h);
    l.ln2_b = zeros(p + ".ffn.norm.beta", h);
    return l;
  }
};

template <typename T>
std::vector<T> mask_factors(const std::vector<std::uint8_t>& mask) {
  std::vector<T> f(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) f[i] = mask[i] != 0 ? T(1) : T(0);
  return f;
}

}  // namespace

template <typename T>
SegmentationModel<T>::SegmentationModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  Builder<T> b{params_, rng};
  const EncoderConfig& e = config_.encoder;
  const std::size_t h = e.hidden;
  encoder_.word = b.weight("encoder.embeddings.word", {e.vocab, h});
  if (e.use_positions) {
    encoder_.position = b.weight("encoder.embeddings.position", {e.max_positions, h});
    encoder_.has_position = true;
  }
  if (e.use_types) {
    encoder_.type = b.weight("encoder.embeddings.type", {e.type_vocab, h});
    encoder_.has_type = true;
  }
  encoder_.ln_g = b.ones("encoder.embeddings.norm.gamma", h);
  encoder_.ln_b = b.zeros("encoder.embeddings.norm.beta", h);
  for (std::size_t l = 0; l < e.layers; ++l) {
    encoder_.layers.push_back(b.layer("encoder.layer" + std::to_string(l), h, e.ff_size()));
  }
  std::size_t classifier_in = h;
  if (config_.arch == Arch::kBiLstm) {
    const std::size_t u = config_.lstm_hidden;
    fwd_wx_ = b.weight("lstm.forward.input_weight", {h, 4 * u});
    fwd_wh_ = b.weight("lstm.forward.recurrent_weight", {u, 4 * u});
    fwd_b_ = b.zeros("lstm.forward.bias", 4 * u);
    bwd_wx_ = b.weight("lstm.backward.input_weight", {h, 4 * u});
    bwd_wh_ = b.weight("lstm.backward.recurrent_weight", {u, 4 * u});
    bwd_b_ = b.zeros("lstm.backward.bias", 4 * u);
    classifier_in = 2 * u;
  } else if (config_.arch == Arch::kHier) {
    if (e.use_positions) doc_pos_ = b.weight("document.position", {config_.doc_positions, h});
    doc_ln_g_ = b.ones("document.norm.gamma", h);
    doc_ln_b_ = b.zeros("document.norm.beta", h);
    for (std::size_t l = 0; l < config_.document_layers(); ++l) {
      doc_layers_.push_back(b.layer("document.layer" + std::to_string(l), h, e.ff_size()));
    }
  }
  cls_w_ = b.weight("classifier.weight", {classifier_in, 2});
  cls_b_ = b.zeros("classifier.bias", 2);
}

template <typename T>
Var<T> SegmentationModel<T>::encoder_stack(Tape<T>& tape, Var<T> x, const std::vector<LayerParams>& layers,
                                           const std::vector<std::pair<std::size_t, std::size_t>>& sequences,
                                           const std::vector<std::uint8_t>& mask, Rng* rng) {
  auto p = [&](std::size_t id) { return tape.parameter(params_[id]); };
  const double rate = rng != nullptr ? config_.encoder.dropout : 0.0;
  const ops::AttentionLayout layout{sequences, config_.encoder.heads, mask};
  for (const LayerParams& l : layers) {
    Var<T> q = ops::linear(x, p(l.q_w), p(l.q_b));
    Var<T> k = ops::linear(x, p(l.k_w), p(l.k_b));
    Var<T> v = ops::linear(x, p(l.v_w), p(l.v_b));
    Var<T> ctx = ops::attention(q, k, v, layout, rate, rng);
    Var<T> a = ops::linear(ctx, p(l.o_w), p(l.o_b));
    if (rng != nullptr) a = ops::dropout(a, rate, *rng);
    x = ops::layer_norm(ops::add(x, a), p(l.ln1_g), p(l.ln1_b));
    Var<T> f = ops::linear(ops::gelu(ops::linear(x, p(l.ff1_w), p(l.ff1_b))), p(l.ff2_w), p(l.ff2_b));
    if (rng != nullptr) f = ops::dropout(f, rate, *rng);
    x = ops::layer_norm(ops::add(x, f), p(l.ln2_g), p(l.ln2_b));
  }
  return x;
}

template <typename T>
Var<T> SegmentationModel<T>::encode(Tape<T>& tape, const PackedInput& input, Rng* rng) {
  const EncoderConfig& e = config_.encoder;
  if (input.rows() == 0) throw InvalidArgument("encoder input is empty");
  std::vector<std::size_t> positions(input.rows());
  std::vector<std::size_t> types(input.rows());
  for (const auto& [offset, len] : input.sequences) {
    if (len > e.max_positions) {
      throw InvalidArgument("sequence of " + std::to_string(len) + " tokens exceeds " +
                            std::to_string(e.max_positions) + " positions");
    }
    for (std::size_t i = 0; i < len; ++i) positions[offset + i] = i;
  }
  for (std::size_t r = 0; r < input.rows(); ++r) {
    if (input.types[r] < 0 || (encoder_.has_type && static_cast<std::size_t>(input.types[r]) >= e.type_vocab)) {
      throw InvalidArgument("type id " + std::to_string(input.types[r]) + " outside type vocabulary");
    }
    types[r] = static_cast<std::size_t>(input.types[r]);
  }
  auto p = [&](std::size_t id) { return tape.parameter(params_[id]); };
  Var<T> x = ops::embedding(p(encoder_.word), std::span<const TokenId>(input.ids));
  // padded rows carry no token information
  if (std::find(input.mask.begin(), input.mask.end(), 0) != input.mask.end()) {
    x = ops::scale_rows(x, mask_factors<T>(input.mask));
  }
  if (encoder_.has_position) x = ops::add(x, ops::gather_rows(p(encoder_.position), std::span<const std::size_t>(positions)));
  if (encoder_.has_type) x = ops::add(x, ops::gather_rows(p(encoder_.type), std::span<const std::size_t>(types)));
  x = ops::layer_norm(x, p(encoder_.ln_g), p(encoder_.ln_b));
  return encoder_stack(tape, x, encoder_.layers, input.sequences, input.mask, rng);
}

template <typename T>
Var<T> SegmentationModel<T>::classify(Tape<T>& tape, Var<T> x, Rng* rng) {
  if (rng != nullptr) x = ops::dropout(x, config_.encoder.dropout, *rng);
  return ops::linear(x, tape.parameter(params_[cls_w_]), tape.parameter(params_[cls_b_]));
}

template <typename T>
Var<T> SegmentationModel<T>::example_logits(Tape<T>& tape, std::span<const CandidateExample* const> examples,
                                            Rng* rng) {
  if (config_.arch != Arch::kCross) throw InvalidArgument("example_logits needs the cross-segment architecture");
  if (examples.empty()) throw InvalidArgument("empty example batch");
  const std::size_t length = config_.context_left + config_.context_right + 2;
  PackedInput input;
  std::vector<std::size_t> heads;
  for (const CandidateExample* ex : examples) {
    if (ex->input_ids.size() != length) {
      throw InvalidArgument("example " + ex->key() + " has length " + std::to_string(ex->input_ids.size()) +
                            ", model expects " + std::to_string(length));
    }
    heads.push_back(input.rows());
    input.add(ex->input_ids, ex->segment_ids, ex->attention_mask);
  }
  Var<T> h = encode(tape, input, rng);
  return classify(tape, ops::gather_rows(h, std::span<const std::size_t>(heads)), rng);
}

template <typename T>
Var<T> SegmentationModel<T>::unit_vectors(Tape<T>& tape, std::span<const Document* const> chunks, Rng* rng,
                                          std::vector<std::size_t>& unit_counts) {
  PackedInput input;
  std::vector<std::size_t> rows;
  for (const Document* chunk : chunks) {
    if (chunk->size() == 0) throw InvalidArgument("chunk '" + chunk->id + "' is empty");
    if (chunk->size() > config_.doc_positions) {
      throw InvalidArgument("chunk '" + chunk->id + "' has " + std::to_string(chunk->size()) +
                            " units; split it with chunk_document (max " + std::to_string(config_.doc_positions) + ")");
    }
    unit_counts.push_back(chunk->size());
    if (config_.mode == UnitMode::kDocument) {
      for (const Sentence& s : chunk->sentences) {
        if (s.pieces.size() + 1 > config_.max_sentence_tokens) {
          throw InvalidArgument("sentence in '" + chunk->id + "' has " + std::to_string(s.pieces.size() + 1) +
                                " tokens; truncate with truncate_sentence (max " +
                                std::to_string(config_.max_sentence_tokens) + ")");
        }
        std::vector<TokenId> ids;
        ids.reserve(s.pieces.size() + 1);
        ids.push_back(config_.cls_id);
        ids.insert(ids.end(), s.pieces.begin(), s.pieces.end());
        rows.push_back(input.rows());
        input.add(ids);
      }
    } else {
      std::vector<TokenId> ids{config_.cls_id};
      const std::size_t base = input.rows();
      for (const Sentence& word : chunk->sentences) {
        rows.push_back(base + ids.size());
        ids.insert(ids.end(), word.pieces.begin(), word.pieces.end());
      }
      input.add(ids);
    }
  }
  Var<T> h = encode(tape, input, rng);
  return ops::gather_rows(h, std::span<const std::size_t>(rows));
}

template <typename T>
Var<T> SegmentationModel<T>::unit_logits(Tape<T>& tape, std::span<const Document* const> chunks, Rng* rng) {
  if (config_.arch == Arch::kCross) throw InvalidArgument("unit_logits needs the bilstm or hier architecture");
  if (chunks.empty()) throw InvalidArgument("empty chunk batch");
  std::vector<std::size_t> counts;
  Var<T> units = unit_vectors(tape, chunks, rng, counts);
  auto p = [&](std::size_t id) { return tape.parameter(params_[id]); };
  if (config_.arch == Arch::kBiLstm) {
    std::vector<Var<T>> parts;
    std::size_t offset = 0;
    for (std::size_t n : counts) {
      Var<T> x = counts.size() == 1 ? units : ops::slice(units, 0, offset, n);
      offset += n;
      Var<T> f = ops::lstm(x, p(fwd_wx_), p(fwd_wh_), p(fwd_b_), false);
      Var<T> b = ops::lstm(x, p(bwd_wx_), p(bwd_wh_), p(bwd_b_), true);
      parts.push_back(ops::concat(std::vector<Var<T>>{f, b}, 1));
    }
    Var<T> states = parts.size() == 1 ? parts[0] : ops::concat(parts, 0);
    return classify(tape, states, rng);
  }
  // hierarchical: unit vectors plus document positions through the document encoder
  std::vector<std::pair<std::size_t, std::size_t>> sequences;
  std::vector<std::size_t> positions;
  std::size_t offset = 0;
  for (std::size_t n : counts) {
    sequences.emplace_back(offset, n);
    for (std::size_t i = 0; i < n; ++i) positions.push_back(i);
    offset += n;
  }
  Var<T> x = units;
  if (config_.encoder.use_positions) {
    x = ops::add(x, ops::gather_rows(p(doc_pos_), std::span<const std::size_t>(positions)));
  }
  x = ops::layer_norm(x, p(doc_ln_g_), p(doc_ln_b_));
  x = encoder_stack(tape, x, doc_layers_, sequences, {}, rng);
  return classify(tape, x, rng);
}

template <typename T>
Var<T> SegmentationModel<T>::break_logits(Tape<T>& tape, std::span<const Document* const> chunks, Rng* rng) {
  Var<T> logits = unit_logits(tape, chunks, rng);
  std::vector<std::size_t> rows;
  std::size_t base = 0;
  for (const Document* chunk : chunks) {
    for (std::size_t b = 0; b < break_count(*chunk); ++b) rows.push_back(base + break_row(b));
    base += chunk->size();
  }
  if (rows.empty()) throw InvalidArgument("chunk batch has no candidate breaks");
  return ops::gather_rows(logits, std::span<const std::size_t>(rows));
}

template <typename T>
template <typename U>
SegmentationModel<U> SegmentationModel<T>::cast() const {
  SegmentationModel<U> out;
  out.config_ = config_;
  out.params_ = params_.template cast<U>();
  out.encoder_ = encoder_;
  out.fwd_wx_ = fwd_wx_;
  out.fwd_wh_ = fwd_wh_;
  out.fwd_b_ = fwd_b_;
  out.bwd_wx_ = bwd_wx_;
  out.bwd_wh_ = bwd_wh_;
  out.bwd_b_ = bwd_b_;
  out.doc_pos_ = doc_pos_;
  out.doc_ln_g_ = doc_ln_g_;
  out.doc_ln_b_ = doc_ln_b_;
  out.doc_layers_ = doc_layers_;
  out.cls_w_ = cls_w_;
  out.cls_b_ = cls_b_;
  return out;
}

std::vector<Document> prepare_chunks(const Document& doc, const ModelConfig& config) {
  std::vector<Document> chunks = chunk_document(doc, config.doc_positions);
  if (config.mode == UnitMode::kDocument) {
    const std::size_t keep = config.max_sentence_tokens - 1;
    for (Document& c : chunks) {
      for (Sentence& s : c.sentences) {
        if (s.pieces.size() > keep) {
          s.pieces.resize(keep);
          std::erase_if(s.word_starts, [keep](std::size_t w) { return w >= keep; });
          s.words.resize(std::max<std::size_t>(1, s.word_starts.size()));
        }
      }
    }
  }
  return chunks;
}

template class SegmentationModel<float>;
template class SegmentationModel<double>;
template SegmentationModel<double> SegmentationModel<float>::cast<double>() const;
template SegmentationModel<float> SegmentationModel<double>::cast<float>() const;

}  // namespace segkit
