#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "segkit/corpus.hpp"
#include "segkit/models.hpp"
#include "segkit/optim.hpp"

namespace segkit {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 64;  // candidate examples (cross) or chunks (bilstm / hier)
  std::size_t steps = 2000;
  std::size_t warmup = 200;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  double positive_weight = 1.0;  // cross-entropy weight of the boundary class
  std::size_t eval_every = 200;  // 0 disables periodic validation
  bool linear_decay = true;
  AdamWConfig adam;

  // Throws InvalidArgument for lr outside [0, 1], dropout outside [0, 1),
  // batch or steps of 0, or warmup > steps.
  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  double f1 = 0.0;         // validation F1 at the best grid threshold
  double threshold = 0.5;  // that threshold
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
};

struct TrainResult {
  double threshold = 0.5;
  TrainHistory history;
};

// 0.05, 0.10, ..., 0.95
std::vector<double> threshold_grid();

// Probability of a boundary after each unit 0..n-2 of `doc`. Breaks that fall
// on a chunk edge (bilstm / hier) have no prediction and get probability 0.
template <typename T>
std::vector<double> boundary_probabilities(SegmentationModel<T>& model, const Document& doc,
                                           const Vocabulary& vocab);

// Units i with probs[i] >= threshold.
std::vector<std::size_t> predict_boundaries(std::span<const double> probs, double threshold);

template <typename T>
std::vector<std::size_t> predict_boundaries(SegmentationModel<T>& model, const Document& doc,
                                            const Vocabulary& vocab, double threshold);

// Grid threshold with the best micro F1 over `docs` (lowest threshold on
// ties). `probs[d]` belongs to docs[d].
EvalRecord select_threshold(const std::vector<Document>& docs, const std::vector<std::vector<double>>& probs);

// Two logits per candidate break, keyed "docid:position".
class LogitStore {
 public:
  // Throws InvalidArgument on a repeated key.
  void add(const std::string& key, std::array<float, 2> logits);
  const std::array<float, 2>* find(const std::string& key) const;
  const std::array<float, 2>& at(const std::string& key) const;  // InvalidArgument when missing
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }

  void save(const std::filesystem::path& path) const;
  static LogitStore load(const std::filesystem::path& path);

  bool operator==(const LogitStore& other) const;

 private:
  std::vector<std::string> keys_;
  std::vector<std::array<float, 2>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
LogitStore record_teacher_logits(SegmentationModel<T>& teacher, const std::vector<Document>& docs,
                                 const Vocabulary& vocab);

// alpha * CE(student, labels) + (1 - alpha) * MSE(student, teacher).
template <typename T>
Var<T> distill_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, std::span<const int> labels,
                    double alpha, std::span<const T> weights = {});

struct DistillConfig {
  double alpha = 0.5;
  void validate() const;
};

// Trains `model` in place; the selected threshold is also written to
// model.config().threshold. Throws NumericError when the loss turns NaN.
template <typename T>
TrainResult train(SegmentationModel<T>& model, const std::vector<Document>& train_docs,
                  const std::vector<Document>& valid_docs, const Vocabulary& vocab, const TrainConfig& config);

// As train, with distill_loss against the stored teacher logits. Throws
// InvalidArgument when a training candidate has no stored logits.
template <typename T>
TrainResult distill(SegmentationModel<T>& student, const std::vector<Document>& train_docs,
                    const std::vector<Document>& valid_docs, const Vocabulary& vocab, const LogitStore& teacher,
                    const TrainConfig& config, const DistillConfig& distill_config);

// One minibatch: cross-segment examples or unit-model chunks (one of the two).
struct Batch {
  std::vector<const CandidateExample*> examples;
  std::vector<const Document*> chunks;
};

// Loss of a batch; with `teacher` set the loss is distill_loss at `alpha`.
template <typename T>
Var<T> batch_loss(Tape<T>& tape, SegmentationModel<T>& model, const Batch& batch, double positive_weight,
                  Rng* dropout, const LogitStore* teacher = nullptr, double alpha = 1.0);

extern template std::vector<double> boundary_probabilities<float>(SegmentationModel<float>&, const Document&,
                                                                  const Vocabulary&);
extern template std::vector<double> boundary_probabilities<double>(SegmentationModel<double>&, const Document&,
                                                                   const Vocabulary&);

}  // namespace segkit
