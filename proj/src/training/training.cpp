#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "segkit/metrics.hpp"
#include "segkit/ops.hpp"
#include "segkit/training.hpp"

namespace segkit {

void TrainConfig::validate() const {
  if (!(lr >= 0.0 && lr <= 1.0)) throw InvalidArgument("learning rate must be in [0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must be in [0, 1)");
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  if (steps == 0) throw InvalidArgument("steps must be positive");
  if (warmup > steps) throw InvalidArgument("warmup steps exceed total steps");
  if (!(positive_weight > 0.0)) throw InvalidArgument("positive-class weight must be positive");
}

void DistillConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(i / 20.0);  // i * 0.05 misses 0.3 exactly
  return grid;
}

std::vector<std::size_t> predict_boundaries(std::span<const double> probs, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] >= threshold) out.push_back(i);
  }
  return out;
}

namespace {

// chunk "<doc>#c" -> (doc id, unit offset of the chunk)
std::pair<std::string, std::size_t> chunk_origin(const Document& chunk, std::size_t chunk_size) {
  const auto hash = chunk.id.rfind('#');
  const std::size_t c = std::stoul(chunk.id.substr(hash + 1));
  return {chunk.id.substr(0, hash), c * chunk_size};
}

template <typename T>
double boundary_prob(const T* logits) {
  // softmax over two classes, second component
  const double d = static_cast<double>(logits[0]) - static_cast<double>(logits[1]);
  return 1.0 / (1.0 + std::exp(d));
}

constexpr std::size_t kInferenceBatch = 64;

template <typename T>
void check_vocab(const SegmentationModel<T>& model, const Vocabulary& vocab) {
  if (model.config().encoder.vocab < vocab.size()) {
    throw InvalidArgument("model vocabulary (" + std::to_string(model.config().encoder.vocab) +
                          ") is smaller than the data vocabulary (" + std::to_string(vocab.size()) + ")");
  }
  if (model.config().arch != Arch::kCross && model.config().cls_id != vocab.cls_id()) {
    throw InvalidArgument("model [CLS] id does not match the vocabulary");
  }
}

// Logits of every predicted break of `doc`, as (position, logits) pairs.
template <typename T>
std::vector<std::pair<std::size_t, std::array<T, 2>>> break_logit_rows(SegmentationModel<T>& model,
                                                                      const Document& doc,
                                                                      const Vocabulary& vocab) {
  std::vector<std::pair<std::size_t, std::array<T, 2>>> out;
  const ModelConfig& c = model.config();
  if (c.arch == Arch::kCross) {
    const auto examples = extract_cross_segment(doc, c.context_left, c.context_right, vocab);
    for (std::size_t start = 0; start < examples.size(); start += kInferenceBatch) {
      std::vector<const CandidateExample*> batch;
      for (std::size_t i = start; i < std::min(examples.size(), start + kInferenceBatch); ++i) {
        batch.push_back(&examples[i]);
      }
      Tape<T> tape(false);
      const Tensor<T>& logits = model.example_logits(tape, batch, nullptr).value();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        out.push_back({batch[i]->position, {logits[2 * i], logits[2 * i + 1]}});
      }
    }
    return out;
  }
  const auto chunks = prepare_chunks(doc, c);
  std::size_t offset = 0;
  for (const Document& chunk : chunks) {
    if (break_count(chunk) > 0) {
      std::vector<const Document*> one{&chunk};
      Tape<T> tape(false);
      const Tensor<T>& logits = model.break_logits(tape, one, nullptr).value();
      for (std::size_t b = 0; b < break_count(chunk); ++b) {
        out.push_back({offset + b, {logits[2 * b], logits[2 * b + 1]}});
      }
    }
    offset += chunk.size();
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<double> boundary_probabilities(SegmentationModel<T>& model, const Document& doc,
                                           const Vocabulary& vocab) {
  check_vocab(model, vocab);
  std::vector<double> probs(doc.size() > 0 ? doc.size() - 1 : 0, 0.0);
  for (const auto& [pos, logits] : break_logit_rows(model, doc, vocab)) probs[pos] = boundary_prob(logits.data());
  return probs;
}

template <typename T>
std::vector<std::size_t> predict_boundaries(SegmentationModel<T>& model, const Document& doc,
                                            const Vocabulary& vocab, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must be in (0, 1)");
  const auto probs = boundary_probabilities(model, doc, vocab);
  return predict_boundaries(std::span<const double>(probs), threshold);
}

EvalRecord select_threshold(const std::vector<Document>& docs, const std::vector<std::vector<double>>& probs) {
  EvalRecord best;
  best.f1 = -1.0;
  for (double tau : threshold_grid()) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      const Prf r = prf1(predict_boundaries(std::span<const double>(probs[d]), tau), docs[d].boundaries,
                         docs[d].size());
      tp += r.tp;
      fp += r.fp;
      fn += r.fn;
    }
    const double f1 = tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    if (f1 > best.f1) {
      best.f1 = f1;
      best.threshold = tau;
    }
  }
  return best;
}

// ---- logit store

void LogitStore::add(const std::string& key, std::array<float, 2> logits) {
  if (!index_.emplace(key, keys_.size()).second) throw InvalidArgument("duplicate logit key '" + key + "'");
  keys_.push_back(key);
  values_.push_back(logits);
}

const std::array<float, 2>* LogitStore::find(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &values_[it->second];
}

const std::array<float, 2>& LogitStore::at(const std::string& key) const {
  const auto* v = find(key);
  if (v == nullptr) throw InvalidArgument("no teacher logits for '" + key + "'");
  return *v;
}

bool LogitStore::operator==(const LogitStore& other) const {
  return keys_ == other.keys_ && values_ == other.values_;
}

void LogitStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("SGKL", 4);
  const std::uint64_t n = keys_.size();
  out.write(reinterpret_cast<const char*>(&n), 8);
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    const auto len = static_cast<std::uint16_t>(keys_[i].size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(keys_[i].data(), len);
    out.write(reinterpret_cast<const char*>(values_[i].data()), 8);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

LogitStore LogitStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (data.size() - pos < n) throw FormatError(path.string() + ": truncated at byte " + std::to_string(pos));
    std::memcpy(dst, data.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4);
  if (std::memcmp(magic, "SGKL", 4) != 0) throw FormatError(path.string() + ": not a logit store");
  std::uint64_t n = 0;
  take(&n, 8);
  LogitStore store;
  for (std::uint64_t i = 0; i < n; ++i) {
    std::uint16_t len = 0;
    take(&len, 2);
    std::string key(len, '\0');
    take(key.data(), len);
    std::array<float, 2> v{};
    take(v.data(), 8);
    store.add(key, v);
  }
  if (pos != data.size()) throw FormatError(path.string() + ": trailing bytes");
  return store;
}

template <typename T>
LogitStore record_teacher_logits(SegmentationModel<T>& teacher, const std::vector<Document>& docs,
                                 const Vocabulary& vocab) {
  check_vocab(teacher, vocab);
  LogitStore store;
  for (const Document& doc : docs) {
    for (const auto& [pos, logits] : break_logit_rows(teacher, doc, vocab)) {
      store.add(doc.id + ":" + std::to_string(pos), {static_cast<float>(logits[0]), static_cast<float>(logits[1])});
    }
  }
  return store;
}

template <typename T>
Var<T> distill_loss(Var<T> student_logits, const Tensor<T>& teacher_logits, std::span<const int> labels,
                    double alpha, std::span<const T> weights) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
  Tape<T>& tape = student_logits.tape();
  Var<T> ce = ops::cross_entropy(student_logits, labels, weights);
  Var<T> mse = ops::mse(student_logits, tape.constant(teacher_logits));
  return ops::add(ops::scale(ce, static_cast<T>(alpha)), ops::scale(mse, static_cast<T>(1.0 - alpha)));
}

// ---- training loop

template <typename T>
Var<T> batch_loss(Tape<T>& tape, SegmentationModel<T>& model, const Batch& batch, double positive_weight,
                  Rng* dropout, const LogitStore* teacher, double alpha) {
  std::vector<int> labels;
  std::vector<std::string> keys;
  Var<T> logits;
  if (!batch.examples.empty()) {
    for (const CandidateExample* ex : batch.examples) {
      labels.push_back(ex->label);
      if (teacher != nullptr) keys.push_back(ex->key());
    }
    logits = model.example_logits(tape, batch.examples, dropout);
  } else {
    for (const Document* chunk : batch.chunks) {
      const auto [doc_id, offset] =
          teacher != nullptr ? chunk_origin(*chunk, model.config().doc_positions) : std::pair<std::string, std::size_t>{};
      for (std::size_t b = 0; b < break_count(*chunk); ++b) {
        labels.push_back(std::binary_search(chunk->boundaries.begin(), chunk->boundaries.end(), b) ? 1 : 0);
        if (teacher != nullptr) keys.push_back(doc_id + ":" + std::to_string(offset + b));
      }
    }
    logits = model.break_logits(tape, batch.chunks, dropout);
  }
  std::vector<T> weights;
  if (positive_weight != 1.0) {
    for (int l : labels) weights.push_back(l == 1 ? static_cast<T>(positive_weight) : T(1));
  }
  if (teacher == nullptr) return ops::cross_entropy(logits, std::span<const int>(labels), std::span<const T>(weights));
  Tensor<T> target(Shape{labels.size(), 2});
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& v = teacher->at(keys[i]);
    target[2 * i] = static_cast<T>(v[0]);
    target[2 * i + 1] = static_cast<T>(v[1]);
  }
  return distill_loss(logits, target, std::span<const int>(labels), alpha, std::span<const T>(weights));
}

namespace {

template <typename T>
EvalRecord validate_model(SegmentationModel<T>& model, const std::vector<Document>& docs, const Vocabulary& vocab,
                          std::size_t step) {
  std::vector<std::vector<double>> probs;
  probs.reserve(docs.size());
  for (const Document& d : docs) probs.push_back(boundary_probabilities(model, d, vocab));
  EvalRecord r = select_threshold(docs, probs);
  r.step = step;
  return r;
}

template <typename T>
TrainResult train_impl(SegmentationModel<T>& model, const std::vector<Document>& train_docs,
                       const std::vector<Document>& valid_docs, const Vocabulary& vocab, const TrainConfig& config,
                       const LogitStore* teacher, double alpha) {
  config.validate();
  check_vocab(model, vocab);
  model.config().encoder.dropout = config.dropout;
  const ModelConfig& mc = model.config();

  // candidates, in document order
  std::vector<CandidateExample> examples;
  std::vector<Document> chunks;
  if (mc.arch == Arch::kCross) {
    for (const Document& d : train_docs) {
      auto ex = extract_cross_segment(d, mc.context_left, mc.context_right, vocab);
      examples.insert(examples.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
    }
  } else {
    for (const Document& d : train_docs) {
      for (Document& c : prepare_chunks(d, mc)) {
        if (break_count(c) > 0) chunks.push_back(std::move(c));
      }
    }
  }
  const std::size_t items = mc.arch == Arch::kCross ? examples.size() : chunks.size();
  if (items == 0) throw InvalidArgument("training set has no candidate breaks");
  if (teacher != nullptr) {
    // fail before any step when a candidate has no teacher logits
    for (const CandidateExample& ex : examples) teacher->at(ex.key());
    for (const Document& c : chunks) {
      const auto [doc_id, offset] = chunk_origin(c, mc.doc_positions);
      for (std::size_t b = 0; b < break_count(c); ++b) teacher->at(doc_id + ":" + std::to_string(offset + b));
    }
  }

  Rng order_rng(config.seed);
  Rng dropout_rng(order_rng.fork());
  std::vector<std::size_t> order(items);
  std::size_t cursor = items;
  AdamW<T> adam(config.adam);
  TrainResult result;

  for (std::size_t step = 0; step < config.steps; ++step) {
    Batch batch;
    for (std::size_t i = 0; i < std::min(config.batch, items); ++i) {
      if (cursor == items) {
        for (std::size_t j = 0; j < items; ++j) order[j] = j;
        order_rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const std::size_t pick = order[cursor++];
      if (mc.arch == Arch::kCross) batch.examples.push_back(&examples[pick]);
      else batch.chunks.push_back(&chunks[pick]);
    }
    const double lr = lr_schedule(static_cast<std::int64_t>(step + 1), config.lr,
                                  static_cast<std::int64_t>(config.warmup), static_cast<std::int64_t>(config.steps),
                                  config.linear_decay);
    Tape<T> tape;
    model.params().zero_grad();
    Var<T> loss = batch_loss(tape, model, batch, config.positive_weight, &dropout_rng, teacher, alpha);
    const double value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(value)) {
      throw NumericError("training diverged: loss is " + std::to_string(value) + " at step " +
                         std::to_string(step + 1) + " (lr " + std::to_string(lr) + ")");
    }
    tape.backward(loss);
    adam.step(model.params(), lr);
    result.history.steps.push_back({step + 1, lr, value});
    if (!valid_docs.empty() && config.eval_every > 0 && (step + 1) % config.eval_every == 0 &&
        step + 1 != config.steps) {
      result.history.evals.push_back(validate_model(model, valid_docs, vocab, step + 1));
    }
  }
  if (!valid_docs.empty()) {
    const EvalRecord last = validate_model(model, valid_docs, vocab, config.steps);
    result.history.evals.push_back(last);
    result.threshold = last.threshold;
  }
  model.config().threshold = result.threshold;
  return result;
}

}  // namespace

template <typename T>
TrainResult train(SegmentationModel<T>& model, const std::vector<Document>& train_docs,
                  const std::vector<Document>& valid_docs, const Vocabulary& vocab, const TrainConfig& config) {
  return train_impl(model, train_docs, valid_docs, vocab, config, nullptr, 1.0);
}

template <typename T>
TrainResult distill(SegmentationModel<T>& student, const std::vector<Document>& train_docs,
                    const std::vector<Document>& valid_docs, const Vocabulary& vocab, const LogitStore& teacher,
                    const TrainConfig& config, const DistillConfig& distill_config) {
  distill_config.validate();
  return train_impl(student, train_docs, valid_docs, vocab, config, &teacher, distill_config.alpha);
}

#define SEGKIT_INSTANTIATE_TRAINING(T)                                                                          \
  template std::vector<double> boundary_probabilities<T>(SegmentationModel<T>&, const Document&,              \
                                                         const Vocabulary&);                                   \
  template std::vector<std::size_t> predict_boundaries<T>(SegmentationModel<T>&, const Document&,             \
                                                          const Vocabulary&, double);                         \
  template LogitStore record_teacher_logits<T>(SegmentationModel<T>&, const std::vector<Document>&,           \
                                               const Vocabulary&);                                             \
  template Var<T> distill_loss<T>(Var<T>, const Tensor<T>&, std::span<const int>, double, std::span<const T>); \
  template Var<T> batch_loss<T>(Tape<T>&, SegmentationModel<T>&, const Batch&, double, Rng*, const LogitStore*, \
                                double);                                                                       \
  template TrainResult train<T>(SegmentationModel<T>&, const std::vector<Document>&,                          \
                                const std::vector<Document>&, const Vocabulary&, const TrainConfig&);          \
  template TrainResult distill<T>(SegmentationModel<T>&, const std::vector<Document>&,                        \
                                  const std::vector<Document>&, const Vocabulary&, const LogitStore&,          \
                                  const TrainConfig&, const DistillConfig&);

SEGKIT_INSTANTIATE_TRAINING(float)
SEGKIT_INSTANTIATE_TRAINING(double)

}  // namespace segkit
