#include "segkit/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "segkit/error.hpp"
#include "segkit/rng.hpp"

namespace segkit {
namespace {

std::vector<std::size_t> normalized(std::span<const std::size_t> set, std::size_t n_units, const char* what) {
  std::vector<std::size_t> out(set.begin(), set.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (!out.empty() && out.back() + 1 >= n_units) {
    throw InvalidArgument(std::string(what) + " boundary " + std::to_string(out.back()) +
                          " is not internal to " + std::to_string(n_units) + " units");
  }
  return out;
}

double ratio(std::size_t num, std::size_t den, bool vacuous) {
  if (den == 0) return vacuous ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

// Segment index of every unit.
std::vector<std::size_t> segment_ids(const std::vector<std::size_t>& boundaries, std::size_t n_units) {
  std::vector<std::size_t> seg(n_units);
  std::size_t b = 0;
  std::size_t current = 0;
  for (std::size_t i = 0; i < n_units; ++i) {
    seg[i] = current;
    if (b < boundaries.size() && boundaries[b] == i) {
      ++current;
      ++b;
    }
  }
  return seg;
}

struct PkCount {
  std::size_t disagree = 0;
  std::size_t probes = 0;
  std::size_t k = 0;
};

PkCount pk_count(std::span<const std::size_t> pred, std::span<const std::size_t> ref, std::size_t n_units,
                 std::optional<std::size_t> k) {
  const auto p = normalized(pred, n_units, "predicted");
  const auto r = normalized(ref, n_units, "reference");
  const std::size_t window = k.value_or(default_pk_window(n_units, r.size()));
  if (window == 0 || window >= n_units) {
    throw InvalidArgument("Pk window " + std::to_string(window) + " must be in [1, " + std::to_string(n_units) + ")");
  }
  const auto sp = segment_ids(p, n_units);
  const auto sr = segment_ids(r, n_units);
  PkCount c;
  c.k = window;
  c.probes = n_units - window;
  for (std::size_t i = 0; i + window < n_units; ++i) {
    const bool same_ref = sr[i] == sr[i + window];
    const bool same_pred = sp[i] == sp[i + window];
    c.disagree += same_ref != same_pred ? 1 : 0;
  }
  return c;
}

}  // namespace

Prf prf1(std::span<const std::size_t> pred, std::span<const std::size_t> ref, std::size_t n_units) {
  const auto p = normalized(pred, n_units, "predicted");
  const auto r = normalized(ref, n_units, "reference");
  std::vector<std::size_t> common;
  std::set_intersection(p.begin(), p.end(), r.begin(), r.end(), std::back_inserter(common));
  Prf out;
  out.tp = common.size();
  out.fp = p.size() - out.tp;
  out.fn = r.size() - out.tp;
  out.precision = ratio(out.tp, p.size(), r.empty());
  out.recall = ratio(out.tp, r.size(), p.empty());
  out.f1 = harmonic(out.precision, out.recall);
  return out;
}

std::size_t default_pk_window(std::size_t n_units, std::size_t ref_count) {
  const std::size_t segments = ref_count + 1;
  // round_half_up(n / segments / 2) in integers
  return std::max<std::size_t>(1, (n_units + segments) / (2 * segments));
}

double pk(std::span<const std::size_t> pred, std::span<const std::size_t> ref, std::size_t n_units,
          std::optional<std::size_t> k) {
  const PkCount c = pk_count(pred, ref, n_units, k);
  return static_cast<double>(c.disagree) / static_cast<double>(c.probes);
}

SegEval corpus_eval(std::span<const DocOutcome> docs) {
  SegEval e;
  std::size_t pred_total = 0;
  std::size_t ref_total = 0;
  double pk_sum = 0.0;
  double k_sum = 0.0;
  std::size_t disagree = 0;
  std::size_t probes = 0;
  for (const auto& d : docs) {
    const Prf p = prf1(d.pred, d.ref, d.n_units);
    e.tp += p.tp;
    e.fp += p.fp;
    e.fn += p.fn;
    pred_total += p.tp + p.fp;
    ref_total += p.tp + p.fn;
    ++e.documents;
    if (d.n_units >= 2) {
      const PkCount c = pk_count(d.pred, d.ref, d.n_units, std::nullopt);
      pk_sum += static_cast<double>(c.disagree) / static_cast<double>(c.probes);
      k_sum += static_cast<double>(c.k);
      disagree += c.disagree;
      probes += c.probes;
      ++e.pk_documents;
    }
  }
  e.precision = ratio(e.tp, pred_total, ref_total == 0);
  e.recall = ratio(e.tp, ref_total, pred_total == 0);
  e.f1 = harmonic(e.precision, e.recall);
  if (e.pk_documents > 0) {
    e.pk = pk_sum / static_cast<double>(e.pk_documents);
    e.mean_k = k_sum / static_cast<double>(e.pk_documents);
    e.pk_pooled = static_cast<double>(disagree) / static_cast<double>(probes);
  }
  return e;
}

SegEval average_folds(std::span<const SegEval> folds) {
  SegEval avg;
  if (folds.empty()) return avg;
  const double n = static_cast<double>(folds.size());
  for (const auto& f : folds) {
    avg.tp += f.tp;
    avg.fp += f.fp;
    avg.fn += f.fn;
    avg.precision += f.precision / n;
    avg.recall += f.recall / n;
    avg.f1 += f.f1 / n;
    avg.pk += f.pk / n;
    avg.pk_pooled += f.pk_pooled / n;
    avg.mean_k += f.mean_k / n;
    avg.documents += f.documents;
    avg.pk_documents += f.pk_documents;
  }
  return avg;
}

double metric_value(const SegEval& e, Metric metric) {
  switch (metric) {
    case Metric::kPrecision: return e.precision;
    case Metric::kRecall: return e.recall;
    case Metric::kF1: return e.f1;
    case Metric::kPk: return e.pk;
  }
  return 0.0;
}

double bootstrap_std(std::span<const DocOutcome> docs, Metric metric, std::size_t resamples, std::uint64_t seed) {
  if (docs.empty()) throw InvalidArgument("bootstrap needs at least one document");
  if (resamples == 0) return 0.0;
  Rng rng(seed);
  std::vector<double> values;
  values.reserve(resamples);
  std::vector<DocOutcome> sample(docs.size());
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& s : sample) s = docs[rng.index(docs.size())];
    values.push_back(metric_value(corpus_eval(sample), metric));
  }
  // shifted by the first value so identical resamples give exactly 0
  const double shift = values.front();
  double mean = 0.0;
  for (double v : values) mean += v - shift;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - shift - mean) * (v - shift - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

}  // namespace segkit
