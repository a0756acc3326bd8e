#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace segkit {

using BoundarySet = std::vector<std::size_t>;

struct Prf {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Internal-boundary precision/recall/F1. An empty prediction set has
// precision 1 when the reference is also empty, else 0; recall likewise.
// Indices must be < n_units - 1 (InvalidArgument otherwise).
Prf prf1(std::span<const std::size_t> pred, std::span<const std::size_t> ref, std::size_t n_units);

// Half the mean reference segment length, rounded half up, at least 1.
std::size_t default_pk_window(std::size_t n_units, std::size_t ref_count);

// Fraction of probe pairs (i, i + k) on which pred and ref disagree about
// being in the same segment. Requires k < n_units.
double pk(std::span<const std::size_t> pred, std::span<const std::size_t> ref, std::size_t n_units,
          std::optional<std::size_t> k = std::nullopt);

struct DocOutcome {
  std::string id;
  BoundarySet pred;
  BoundarySet ref;
  std::size_t n_units = 0;
};

struct SegEval {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double pk = 0.0;         // mean of per-document Pk
  double pk_pooled = 0.0;  // disagreeing probes / all probes
  double mean_k = 0.0;
  std::size_t documents = 0;
  std::size_t pk_documents = 0;  // documents long enough for a probe
};

// Micro P/R/F1 from pooled counts; Pk per document with its own k, then
// macro-averaged over documents with at least two units.
SegEval corpus_eval(std::span<const DocOutcome> docs);

// Mean of each score over folds (counts are summed).
SegEval average_folds(std::span<const SegEval> folds);

enum class Metric { kPrecision, kRecall, kF1, kPk };

double metric_value(const SegEval& e, Metric metric);

// Population standard deviation of the corpus metric over `resamples`
// document-level bootstrap resamples.
double bootstrap_std(std::span<const DocOutcome> docs, Metric metric, std::size_t resamples = 100,
                     std::uint64_t seed = 0);

}  // namespace segkit
