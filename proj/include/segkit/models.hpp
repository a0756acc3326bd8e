#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segkit/autodiff.hpp"
#include "segkit/corpus.hpp"
#include "segkit/error.hpp"
#include "segkit/rng.hpp"

namespace segkit {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 2;
  std::size_t ff = 0;  // 0 means 4 * hidden
  std::size_t max_positions = 512;
  std::size_t vocab = 30522;
  std::size_t type_vocab = 2;
  double dropout = 0.1;
  bool use_positions = true;
  bool use_types = true;

  std::size_t ff_size() const { return ff == 0 ? 4 * hidden : ff; }
  // Throws InvalidArgument when hidden is not divisible by heads or a size is 0.
  void validate() const;
};

// "L12-H768-A12" style name.
std::string encoder_name(const EncoderConfig& config);
// Parses "L<layers>-H<hidden>-A<heads>"; other fields keep their defaults.
EncoderConfig parse_encoder_name(const std::string& name);

// Trainable scalars of an encoder plus a 2-way classifier on its output.
std::size_t count_parameters(const EncoderConfig& config);

enum class Arch { kCross, kBiLstm, kHier };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& text);

struct ModelConfig {
  Arch arch = Arch::kCross;
  EncoderConfig encoder;
  UnitMode mode = UnitMode::kDocument;
  std::size_t context_left = 128;   // cross-segment only
  std::size_t context_right = 128;  // cross-segment only
  std::size_t lstm_hidden = 256;    // per direction
  std::size_t doc_layers = 0;       // hierarchical; 0 means encoder.layers
  std::size_t doc_positions = kMaxChunkSentences;
  std::size_t max_sentence_tokens = kMaxSentenceTokens;
  double threshold = 0.5;
  TokenId cls_id = 2;  // [CLS] prepended to each unit sequence (bilstm / hier)

  std::size_t document_layers() const { return doc_layers == 0 ? encoder.layers : doc_layers; }
  void validate() const;
};

std::size_t count_parameters(const ModelConfig& config);

// Sequences packed row-wise; positions restart at each sequence.
struct PackedInput {
  std::vector<TokenId> ids;
  std::vector<std::int32_t> types;
  std::vector<std::uint8_t> mask;  // 0 marks padding
  std::vector<std::pair<std::size_t, std::size_t>> sequences;  // (offset, length)

  // Appends one sequence; empty types/mask mean all 0 / all 1.
  void add(std::span<const TokenId> ids, std::span<const std::uint8_t> types = {},
           std::span<const std::uint8_t> mask = {});
  std::size_t rows() const { return ids.size(); }
};

// Parameter handles for one transformer layer.
struct LayerParams {
  std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  std::size_t ln1_g, ln1_b;
  std::size_t ff1_w, ff1_b, ff2_w, ff2_b;
  std::size_t ln2_g, ln2_b;
};

struct EncoderParams {
  std::size_t word = 0;
  std::size_t position = 0;
  std::size_t type = 0;
  bool has_position = false;
  bool has_type = false;
  std::size_t ln_g = 0;
  std::size_t ln_b = 0;
  std::vector<LayerParams> layers;
};

template <typename T>
class SegmentationModel {
 public:
  // Weights from a truncated normal (sd 0.02), biases 0, layer-norm gains 1.
  SegmentationModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  // Hidden vectors [rows, H] of the main encoder. `rng` drives dropout;
  // null disables it.
  Var<T> encode(Tape<T>& tape, const PackedInput& input, Rng* rng);

  // Cross-segment logits [B, 2], one row per example.
  Var<T> example_logits(Tape<T>& tape, std::span<const CandidateExample* const> examples, Rng* rng);

  // Encoder vectors [units, H] for every unit of each chunk, stacked;
  // unit_counts receives the chunk sizes. Document mode: one [CLS]-prefixed
  // sequence per sentence, the [CLS] row is kept. Discourse mode: one
  // [CLS]-prefixed sequence per chunk, each word keeps the row of its
  // left-most piece.
  Var<T> unit_vectors(Tape<T>& tape, std::span<const Document* const> chunks, Rng* rng,
                      std::vector<std::size_t>& unit_counts);

  // Unit-level logits [units, 2] for each chunk (bilstm / hier), stacked.
  Var<T> unit_logits(Tape<T>& tape, std::span<const Document* const> chunks, Rng* rng);

  // Row of unit_logits holding the decision for the break after unit b.
  // Document mode: the unit itself; discourse mode: the next word (whose
  // "starts a unit" decision it is).
  std::size_t break_row(std::size_t b) const { return config_.mode == UnitMode::kDiscourse ? b + 1 : b; }

  // Logits [breaks, 2] for every candidate break of each chunk, stacked in
  // chunk order (bilstm / hier).
  Var<T> break_logits(Tape<T>& tape, std::span<const Document* const> chunks, Rng* rng);

  template <typename U>
  SegmentationModel<U> cast() const;

 private:
  template <typename U>
  friend class SegmentationModel;
  SegmentationModel() = default;

  Var<T> encoder_stack(Tape<T>& tape, Var<T> x, const std::vector<LayerParams>& layers,
                       const std::vector<std::pair<std::size_t, std::size_t>>& sequences,
                       const std::vector<std::uint8_t>& mask, Rng* rng);
  Var<T> classify(Tape<T>& tape, Var<T> x, Rng* rng);

  ModelConfig config_;
  ParameterSet<T> params_;
  EncoderParams encoder_;
  // bilstm
  std::size_t fwd_wx_ = 0, fwd_wh_ = 0, fwd_b_ = 0, bwd_wx_ = 0, bwd_wh_ = 0, bwd_b_ = 0;
  // hierarchical
  std::size_t doc_pos_ = 0, doc_ln_g_ = 0, doc_ln_b_ = 0;
  std::vector<LayerParams> doc_layers_;
  // classifier
  std::size_t cls_w_ = 0, cls_b_ = 0;
};

// Breaks of a chunk that have a prediction: 0..n-2.
inline std::size_t break_count(const Document& chunk) { return chunk.size() > 0 ? chunk.size() - 1 : 0; }

// Splits documents into model-ready chunks: at most doc_positions sentences,
// each sentence truncated to max_sentence_tokens including [CLS].
std::vector<Document> prepare_chunks(const Document& doc, const ModelConfig& config);

// Checkpoint directory: `config` (key=value lines) and `weights.bin`.
template <typename T>
void save_checkpoint(const SegmentationModel<T>& model, const std::filesystem::path& dir);
template <typename T>
SegmentationModel<T> load_checkpoint(const std::filesystem::path& dir);

std::string config_text(const ModelConfig& config);
ModelConfig parse_config_text(const std::string& text);

class CheckpointError : public FormatError {
 public:
  enum class Kind { kBadMagic, kTruncated, kMismatch, kBadConfig };
  CheckpointError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

extern template class SegmentationModel<float>;
extern template class SegmentationModel<double>;

}  // namespace segkit
