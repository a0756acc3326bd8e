#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "segkit/cli.hpp"
#include "segkit/corpus.hpp"
#include "segkit/metrics.hpp"
#include "segkit/models.hpp"
#include "segkit/training.hpp"

#ifndef SEGKIT_DEFAULT_VOCAB
#define SEGKIT_DEFAULT_VOCAB "uncased_vocab.txt"
#endif

namespace segkit {

namespace {

struct UsageError : Error {
  using Error::Error;
};

struct Options {
  std::string config;
  std::string manifest;

  std::string vocab = SEGKIT_DEFAULT_VOCAB;
  std::string text;
  std::string file;
  bool ids = false;

  std::vector<std::string> inputs;
  std::string format = "jsonl";
  std::string mode = "document";
  std::string separator = kSectionSeparator;
  std::string out;

  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::size_t segments = 10;
  std::string segment_len = "3-11";
  bool prefix_only = false;
  std::string pool;
  std::size_t pool_docs = 500;
  std::size_t clusters = 12;
  std::size_t topics = 8;
  std::size_t words_per_topic = 10;
  std::string sentence_len = "8-12";
  std::string topic_segment_len = "3-6";
  std::string segments_per_doc = "2-5";

  std::string train;
  std::string valid;
  std::string test;
  std::string arch = "cross";
  std::string encoder = "L2-H64-A2";
  std::string context = "16-16";
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t steps = 2000;
  std::size_t warmup = 200;
  bool warmup_set = false;
  double dropout = 0.1;
  double positive_weight = 1.0;
  std::size_t eval_every = 200;
  bool constant_lr = false;
  std::size_t lstm_hidden = 256;
  std::size_t doc_layers = 0;
  std::size_t max_positions = 512;
  std::string checkpoint;

  std::string teacher;
  std::string teacher_logits;
  double alpha = 0.5;

  std::string input;
  double threshold = 0.0;  // 0: use the checkpoint's
  std::string probs;

  std::string pred;
  std::string ref;
  bool pk = false;
  bool pk_detail = false;
  std::size_t bootstrap = 0;
  std::size_t kfold = 0;
  std::string report;

  bool arch_table = false;
  std::size_t vocab_size = 30522;

  std::string contexts;
  std::size_t seeds = 1;
};

// ---------- small helpers

IntRange parse_range(const std::string& text, const std::string& flag) {
  IntRange r;
  const auto dash = text.find('-');
  try {
    std::size_t used = 0;
    if (dash == std::string::npos) {
      r.lo = r.hi = std::stoul(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
    } else {
      r.lo = std::stoul(text.substr(0, dash), &used);
      if (used != dash) throw std::invalid_argument(text);
      const std::string rest = text.substr(dash + 1);
      r.hi = std::stoul(rest, &used);
      if (used != rest.size()) throw std::invalid_argument(text);
    }
  } catch (const std::logic_error&) {
    throw UsageError(flag + ": expected <lo>-<hi>, got '" + text + "'");
  }
  if (r.lo > r.hi) throw UsageError(flag + ": empty range '" + text + "'");
  return r;
}

std::pair<std::size_t, std::size_t> parse_context(const std::string& text) {
  const IntRange r = [&] {
    const auto dash = text.find('-');
    if (dash == std::string::npos) throw UsageError("--context: expected n-m, got '" + text + "'");
    try {
      std::size_t a = 0, b = 0;
      const std::string left = text.substr(0, dash), right = text.substr(dash + 1);
      const std::size_t n = std::stoul(left, &a), m = std::stoul(right, &b);
      if (a != left.size() || b != right.size()) throw std::invalid_argument(text);
      return IntRange{n, m};
    } catch (const std::logic_error&) {
      throw UsageError("--context: expected n-m, got '" + text + "'");
    }
  }();
  if (r.lo == 0 && r.hi == 0) throw UsageError("context 0-0 has no tokens");
  return {r.lo, r.hi};
}

Vocabulary read_vocab(const std::string& path, RunManifest& manifest) {
  Vocabulary v = load_vocab(path);
  manifest.add_input(path);
  return v;
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::string text;
  for (std::size_t i = 0; i < vocab.size(); ++i) text += vocab.token(static_cast<TokenId>(i)) + "\n";
  write_atomic(path, text);
}

Dataset read_dataset(const std::string& path, UnitMode mode, const Vocabulary& vocab, RunManifest& manifest) {
  Dataset d = ingest_jsonl(path, mode, vocab);
  manifest.add_input(path);
  return d;
}

void write_text(const std::filesystem::path& path, const std::string& text, RunManifest& manifest) {
  write_atomic(path, text);
  manifest.add_output(path);
}

ModelConfig model_config(const Options& o, const Vocabulary& vocab) {
  ModelConfig c;
  try {
    c.arch = parse_arch(o.arch);
    c.mode = parse_unit_mode(o.mode);
    c.encoder = parse_encoder_name(o.encoder);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  c.encoder.vocab = vocab.size();
  c.encoder.max_positions = o.max_positions;
  c.encoder.dropout = o.dropout;
  std::tie(c.context_left, c.context_right) = parse_context(o.context);
  c.lstm_hidden = o.lstm_hidden;
  c.doc_layers = o.doc_layers;
  c.cls_id = vocab.cls_id();
  c.validate();
  return c;
}

TrainConfig train_config(const Options& o, std::uint64_t seed) {
  TrainConfig t;
  t.lr = o.lr;
  t.batch = o.batch;
  t.steps = o.steps;
  // default warmup is cut to a tenth of short runs
  t.warmup = o.warmup_set || o.warmup <= o.steps ? o.warmup : o.steps / 10;
  t.dropout = o.dropout;
  t.seed = seed;
  t.positive_weight = o.positive_weight;
  t.eval_every = o.eval_every;
  t.linear_decay = !o.constant_lr;
  t.validate();
  return t;
}

std::string history_tsv(const TrainHistory& h) {
  std::map<std::size_t, const EvalRecord*> evals;
  for (const auto& e : h.evals) evals[e.step] = &e;
  std::string out = "# step\tlr\tloss\tvalid_f1\tthreshold\n";
  for (const auto& s : h.steps) {
    out += fmt::format("{}\t{}\t{}", s.step, s.lr, s.loss);
    auto it = evals.find(s.step);
    if (it != evals.end()) out += fmt::format("\t{}\t{}\n", it->second->f1, it->second->threshold);
    else out += "\t-\t-\n";
  }
  return out;
}

std::vector<DocOutcome> predict_docs(SegmentationModel<float>& model, const std::vector<Document>& docs,
                                     const Vocabulary& vocab, double threshold) {
  std::vector<DocOutcome> outs;
  for (const Document& d : docs) {
    outs.push_back({d.id, predict_boundaries(model, d, vocab, threshold), d.boundaries, d.size()});
  }
  return outs;
}

// ---------- commands

void cmd_tokenize(const Options& o, std::ostream& out, RunManifest& manifest) {
  const Vocabulary vocab = read_vocab(o.vocab, manifest);
  auto emit = [&](const std::string& line) {
    if (!o.ids) {
      out << tokenize_to_line(line, vocab) << "\n";
      return;
    }
    const Encoding e = encode(line, vocab);
    for (std::size_t i = 0; i < e.ids.size(); ++i) out << (i ? " " : "") << e.ids[i];
    out << "\n";
  };
  if (!o.file.empty()) {
    std::ifstream in(o.file);
    if (!in) throw IoError("cannot open " + o.file);
    manifest.add_input(o.file);
    std::string line;
    while (std::getline(in, line)) emit(line);
  } else {
    emit(o.text);
  }
}

void cmd_ingest(const Options& o, std::ostream& out, RunManifest& manifest) {
  const Vocabulary vocab = read_vocab(o.vocab, manifest);
  Dataset data;
  data.mode = parse_unit_mode(o.mode);
  if (o.format == "jsonl") {
    for (const auto& path : o.inputs) {
      Dataset part = read_dataset(path, data.mode, vocab, manifest);
      data.docs.insert(data.docs.end(), part.docs.begin(), part.docs.end());
      data.sentences.insert(data.sentences.end(), part.sentences.begin(), part.sentences.end());
    }
  } else if (o.format == "sections") {
    if (data.mode != UnitMode::kDocument) throw UsageError("--format sections requires --mode document");
    for (const auto& path : o.inputs) {
      data.docs.push_back(ingest_section_text(path, vocab, o.separator));
      manifest.add_input(path);
    }
  } else {
    throw UsageError("--format: expected jsonl or sections, got '" + o.format + "'");
  }
  export_jsonl(data, o.out);
  manifest.add_output(o.out);
  out << "# records\tunits\tboundaries\n";
  std::size_t units = 0, boundaries = 0;
  for (const Document& d : data.as_documents(vocab)) {
    units += d.size();
    boundaries += d.boundaries.size();
  }
  out << data.size() << "\t" << units << "\t" << boundaries << "\n";
}

std::string vocab_out_path(const Options& o) { return o.out + ".vocab"; }

void write_corpus(const Options& o, const std::vector<Document>& docs, const Vocabulary& vocab, std::ostream& out,
                  RunManifest& manifest) {
  export_jsonl(docs, o.out);
  manifest.add_output(o.out);
  save_vocab(vocab, vocab_out_path(o));
  manifest.add_output(vocab_out_path(o));
  std::size_t units = 0, boundaries = 0;
  for (const auto& d : docs) {
    units += d.size();
    boundaries += d.boundaries.size();
  }
  out << "# documents\tunits\tboundaries\n" << docs.size() << "\t" << units << "\t" << boundaries << "\n";
}

void cmd_generate_choi(const Options& o, std::ostream& out, RunManifest& manifest) {
  Rng seeds(o.seed);
  std::vector<Document> pool;
  Vocabulary vocab;
  if (!o.pool.empty()) {
    vocab = read_vocab(o.vocab, manifest);
    pool = read_dataset(o.pool, UnitMode::kDocument, vocab, manifest).docs;
  } else {
    ClusterPoolConfig pc;
    pc.num_docs = o.pool_docs;
    pc.num_clusters = o.clusters;
    pc.seed = seeds.fork();
    SyntheticCorpus c = generate_cluster_pool(pc);
    pool = std::move(c.docs);
    vocab = std::move(c.vocab);
  }
  ChoiConfig cc;
  cc.count = o.count;
  cc.segments_per_doc = o.segments;
  cc.segment_len = parse_range(o.segment_len, "--segment-len");
  cc.prefix_only = o.prefix_only;
  cc.seed = seeds.fork();
  manifest.seeds.emplace_back("choi", cc.seed);
  write_corpus(o, generate_choi_style(pool, cc), vocab, out, manifest);
}

void cmd_generate_topic(const Options& o, std::ostream& out, RunManifest& manifest) {
  TopicConfig tc;
  tc.num_topics = o.topics;
  tc.vocab_per_topic = o.words_per_topic;
  tc.sentence_len = parse_range(o.sentence_len, "--sentence-len");
  tc.segment_len = parse_range(o.topic_segment_len, "--segment-len");
  tc.segments_per_doc = parse_range(o.segments_per_doc, "--segments");
  tc.count = o.count;
  tc.seed = o.seed;
  manifest.seeds.emplace_back("topic", tc.seed);
  SyntheticCorpus c = generate_topic_synthetic(tc);
  write_corpus(o, c.docs, c.vocab, out, manifest);
}

void save_trained(const SegmentationModel<float>& model, const Vocabulary& vocab, const TrainResult& r,
                  const std::string& dir, RunManifest& manifest) {
  save_checkpoint(model, dir);
  save_vocab(vocab, std::filesystem::path(dir) / "vocab.txt");
  write_atomic(std::filesystem::path(dir) / "history.tsv", history_tsv(r.history));
  manifest.add_output(dir);
}

void report_training(const TrainResult& r, std::ostream& out) {
  out << "# steps\tfinal_loss\tthreshold\tvalid_f1\n";
  out << r.history.steps.size() << "\t" << fmt::format("{}", r.history.steps.back().loss) << "\t"
      << fmt::format("{}", r.threshold) << "\t"
      << (r.history.evals.empty() ? std::string("-") : fmt::format("{}", r.history.evals.back().f1)) << "\n";
}

void cmd_train(const Options& o, std::ostream& out, RunManifest& manifest) {
  const Vocabulary vocab = read_vocab(o.vocab, manifest);
  const UnitMode mode = parse_unit_mode(o.mode);
  const auto train_docs = read_dataset(o.train, mode, vocab, manifest).as_documents(vocab);
  std::vector<Document> valid_docs;
  if (!o.valid.empty()) valid_docs = read_dataset(o.valid, mode, vocab, manifest).as_documents(vocab);
  Rng seeds(o.seed);
  const std::uint64_t init_seed = seeds.fork(), train_seed = seeds.fork();
  manifest.seeds = {{"init", init_seed}, {"train", train_seed}};
  SegmentationModel<float> model(model_config(o, vocab), init_seed);
  const TrainResult r = train(model, train_docs, valid_docs, vocab, train_config(o, train_seed));
  save_trained(model, vocab, r, o.checkpoint, manifest);
  report_training(r, out);
}

void cmd_distill(const Options& o, std::ostream& out, RunManifest& manifest) {
  const Vocabulary vocab = read_vocab(o.vocab, manifest);
  const UnitMode mode = parse_unit_mode(o.mode);
  const auto train_docs = read_dataset(o.train, mode, vocab, manifest).as_documents(vocab);
  std::vector<Document> valid_docs;
  if (!o.valid.empty()) valid_docs = read_dataset(o.valid, mode, vocab, manifest).as_documents(vocab);
  LogitStore store;
  if (!o.teacher.empty()) {
    // record the teacher's logits first
    manifest.add_input(o.teacher);
    SegmentationModel<float> teacher = load_checkpoint<float>(o.teacher);
    store = record_teacher_logits(teacher, train_docs, vocab);
    store.save(o.teacher_logits);
    manifest.add_output(o.teacher_logits);
  } else {
    store = LogitStore::load(o.teacher_logits);
    manifest.add_input(o.teacher_logits);
  }
  Rng seeds(o.seed);
  const std::uint64_t init_seed = seeds.fork(), train_seed = seeds.fork();
  manifest.seeds = {{"init", init_seed}, {"train", train_seed}};
  SegmentationModel<float> model(model_config(o, vocab), init_seed);
  const TrainResult r =
      distill(model, train_docs, valid_docs, vocab, store, train_config(o, train_seed), DistillConfig{o.alpha});
  save_trained(model, vocab, r, o.checkpoint, manifest);
  report_training(r, out);
}

void cmd_segment(const Options& o, std::ostream& out, RunManifest& manifest) {
  manifest.add_input(o.checkpoint);
  SegmentationModel<float> model = load_checkpoint<float>(o.checkpoint);
  const std::filesystem::path own_vocab = std::filesystem::path(o.checkpoint) / "vocab.txt";
  const Vocabulary vocab = load_vocab(std::filesystem::exists(own_vocab) ? own_vocab.string() : o.vocab);
  const double tau = o.threshold > 0.0 ? o.threshold : model.config().threshold;
  if (!(tau > 0.0 && tau < 1.0)) throw UsageError("--threshold must be in (0, 1)");
  const UnitMode mode = model.config().mode;
  Dataset data = read_dataset(o.input, mode, vocab, manifest);
  const auto docs = data.as_documents(vocab);
  std::string prob_text = "# id\tposition\tprobability\n";
  std::size_t predicted = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto p = boundary_probabilities(model, docs[i], vocab);
    const auto pred = predict_boundaries(std::span<const double>(p), tau);
    predicted += pred.size();
    for (std::size_t k = 0; k < p.size(); ++k) prob_text += fmt::format("{}\t{}\t{}\n", docs[i].id, k, p[k]);
    if (mode == UnitMode::kDocument) {
      data.docs[i].boundaries = pred;
    } else {
      auto& starts = data.sentences[i].edu_starts;
      starts.clear();
      for (std::size_t b : pred) starts.push_back(b + 1);
    }
  }
  export_jsonl(data, o.out);
  manifest.add_output(o.out);
  if (!o.probs.empty()) write_text(o.probs, prob_text, manifest);
  out << "# records\tpredicted_boundaries\tthreshold\n"
      << data.size() << "\t" << predicted << "\t" << fmt::format("{}", tau) << "\n";
}

std::vector<DocOutcome> match_outcomes(const std::vector<Document>& pred, const std::vector<Document>& ref) {
  std::map<std::string, const Document*> by_id;
  for (const auto& d : pred) by_id[d.id] = &d;
  std::vector<DocOutcome> outs;
  for (const auto& r : ref) {
    auto it = by_id.find(r.id);
    if (it == by_id.end()) throw InvalidArgument("prediction file has no record '" + r.id + "'");
    if (it->second->size() != r.size()) {
      throw InvalidArgument("record '" + r.id + "' has " + std::to_string(it->second->size()) + " units, reference has " +
                            std::to_string(r.size()));
    }
    outs.push_back({r.id, it->second->boundaries, r.boundaries, r.size()});
  }
  if (outs.empty()) throw InvalidArgument("reference file is empty");
  return outs;
}

void cmd_evaluate(const Options& o, std::ostream& out, RunManifest& manifest) {
  // boundaries only: a specials-only vocabulary is enough
  const Vocabulary vocab = word_vocabulary({});
  const UnitMode mode = parse_unit_mode(o.mode);
  const auto pred = read_dataset(o.pred, mode, vocab, manifest).as_documents(vocab);
  const auto ref = read_dataset(o.ref, mode, vocab, manifest).as_documents(vocab);
  const auto outcomes = match_outcomes(pred, ref);

  SegEval e;
  nlohmann::ordered_json report;
  if (o.kfold > 0) {
    std::vector<SegEval> folds;
    nlohmann::ordered_json fold_json = nlohmann::ordered_json::array();
    for (const Fold& f : kfold_split(outcomes.size(), o.kfold, o.seed)) {
      std::vector<DocOutcome> part;
      for (std::size_t i : f.validation) part.push_back(outcomes[i]);
      folds.push_back(corpus_eval(part));
      fold_json.push_back({{"documents", part.size()}, {"f1", folds.back().f1}, {"pk", folds.back().pk}});
    }
    e = average_folds(folds);
    report["folds"] = fold_json;
  } else {
    e = corpus_eval(outcomes);
  }
  std::vector<std::pair<std::string, std::string>> cols{{"documents", std::to_string(e.documents)},
                                                        {"tp", std::to_string(e.tp)},
                                                        {"fp", std::to_string(e.fp)},
                                                        {"fn", std::to_string(e.fn)},
                                                        {"precision", fmt::format("{:.6f}", e.precision)},
                                                        {"recall", fmt::format("{:.6f}", e.recall)},
                                                        {"f1", fmt::format("{:.6f}", e.f1)}};
  if (o.pk || o.pk_detail) {
    cols.emplace_back("pk", fmt::format("{:.6f}", e.pk));
    cols.emplace_back("mean_k", fmt::format("{:.3f}", e.mean_k));
  }
  if (o.pk_detail) {
    cols.emplace_back("pk_pooled", fmt::format("{:.6f}", e.pk_pooled));
    cols.emplace_back("pk_documents", std::to_string(e.pk_documents));
  }
  if (o.bootstrap > 0) {
    manifest.seeds.emplace_back("bootstrap", o.seed);
    cols.emplace_back("f1_std", fmt::format("{:.6f}", bootstrap_std(outcomes, Metric::kF1, o.bootstrap, o.seed)));
    if (o.pk || o.pk_detail) {
      cols.emplace_back("pk_std", fmt::format("{:.6f}", bootstrap_std(outcomes, Metric::kPk, o.bootstrap, o.seed)));
    }
  }
  std::string header = "#", line;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    header += (i ? "\t" : " ") + cols[i].first;
    line += (i ? "\t" : "") + cols[i].second;
  }
  out << header << "\n" << line << "\n";
  if (!o.report.empty()) {
    for (const auto& [k, v] : cols) report[k] = v;
    write_text(o.report, report.dump(2) + "\n", manifest);
  }
}

struct TableRow {
  const char* name;
  double published;
};

// Encoder sizes compared in the architecture study, with their published sizes.
constexpr TableRow kArchTable[] = {{"L24-H1024-A16", 336e6}, {"L12-H768-A12", 110e6}, {"L12-H512-A8", 54e6},
                                   {"L12-H256-A8", 17e6},    {"L6-H256-A8", 13e6},    {"L4-H256-A4", 11e6},
                                   {"L12-H128-A8", 6e6},     {"L6-H128-A8", 5e6},     {"L12-H64-A8", 2.6e6}};

void cmd_params(const Options& o, std::ostream& out, RunManifest&) {
  if (o.arch_table) {
    out << "# config\tparameters\tpublished\trelative_diff\n";
    for (const TableRow& row : kArchTable) {
      EncoderConfig e = parse_encoder_name(row.name);
      e.vocab = o.vocab_size;
      e.max_positions = o.max_positions;
      const auto n = count_parameters(e);
      out << row.name << "\t" << n << "\t" << fmt::format("{}", row.published) << "\t"
          << fmt::format("{:+.4f}", (static_cast<double>(n) - row.published) / row.published) << "\n";
    }
    return;
  }
  ModelConfig c;
  try {
    c.arch = parse_arch(o.arch);
    c.encoder = parse_encoder_name(o.encoder);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  c.encoder.vocab = o.vocab_size;
  c.encoder.max_positions = o.max_positions;
  c.lstm_hidden = o.lstm_hidden;
  c.doc_layers = o.doc_layers;
  out << "# arch\tencoder\tparameters\n" << o.arch << "\t" << o.encoder << "\t" << count_parameters(c) << "\n";
}

std::vector<std::pair<std::size_t, std::size_t>> parse_context_list(const std::string& text) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_context(item));
  }
  return out;
}

void cmd_ablate(const Options& o, std::ostream& out, RunManifest& manifest) {
  const auto pairs = parse_context_list(o.contexts);
  std::string table = "# context\tseeds\tprecision\trecall\tf1\tf1_std\n";
  if (!pairs.empty()) {
    const Vocabulary vocab = read_vocab(o.vocab, manifest);
    const UnitMode mode = parse_unit_mode(o.mode);
    const auto train_docs = read_dataset(o.train, mode, vocab, manifest).as_documents(vocab);
    const auto valid_docs = read_dataset(o.valid, mode, vocab, manifest).as_documents(vocab);
    const auto test_docs = read_dataset(o.test, mode, vocab, manifest).as_documents(vocab);
    for (const auto& [n, m] : pairs) {
      std::vector<double> p, r, f;
      for (std::size_t s = 0; s < o.seeds; ++s) {
        Options run = o;
        run.arch = "cross";
        run.context = std::to_string(n) + "-" + std::to_string(m);
        Rng seeds(o.seed + s);
        const std::uint64_t init_seed = seeds.fork(), train_seed = seeds.fork();
        manifest.seeds.emplace_back(run.context + "#" + std::to_string(s), o.seed + s);
        SegmentationModel<float> model(model_config(run, vocab), init_seed);
        const TrainResult tr = train(model, train_docs, valid_docs, vocab, train_config(run, train_seed));
        const SegEval e = corpus_eval(predict_docs(model, test_docs, vocab, tr.threshold));
        p.push_back(e.precision);
        r.push_back(e.recall);
        f.push_back(e.f1);
      }
      auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      double var = 0;
      for (double x : f) var += (x - mean(f)) * (x - mean(f));
      table += fmt::format("{}-{}\t{}\t{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}\n", n, m, o.seeds, mean(p), mean(r), mean(f),
                           std::sqrt(var / static_cast<double>(f.size())));
    }
  }
  out << table;
  if (!o.report.empty()) write_text(o.report, table, manifest);
}

// ---------- app

struct Command {
  CLI::App* app;
  void (*run)(const Options&, std::ostream&, RunManifest&);
  std::string name;
};

void add_model_flags(CLI::App* a, Options& o) {
  a->add_option("--arch", o.arch, "cross, bilstm or hier");
  a->add_option("--encoder", o.encoder, "encoder size as L<layers>-H<hidden>-A<heads>");
  a->add_option("--context", o.context, "cross-segment context n-m in word-pieces");
  a->add_option("--lstm-hidden", o.lstm_hidden, "bilstm hidden size per direction");
  a->add_option("--doc-layers", o.doc_layers, "hierarchical document encoder layers (0: same as encoder)");
  a->add_option("--max-positions", o.max_positions, "position embeddings");
}

void add_train_flags(CLI::App* a, Options& o) {
  a->add_option("--vocab", o.vocab, "vocabulary file");
  a->add_option("--mode", o.mode, "document or discourse");
  a->add_option("--train", o.train, "training JSONL")->required();
  a->add_option("--valid", o.valid, "validation JSONL (threshold selection)");
  add_model_flags(a, o);
  a->add_option("--lr", o.lr, "peak learning rate");
  a->add_option("--batch", o.batch, "examples (cross) or chunks (bilstm, hier) per step");
  a->add_option("--steps", o.steps, "optimizer steps");
  a->add_option("--warmup", o.warmup, "linear warmup steps");
  a->add_flag("--constant-lr", o.constant_lr, "no linear decay after warmup");
  a->add_option("--dropout", o.dropout, "dropout rate");
  a->add_option("--positive-weight", o.positive_weight, "cross-entropy weight of boundary labels");
  a->add_option("--eval-every", o.eval_every, "validation interval in steps (0: only at the end)");
  a->add_option("--seed", o.seed, "seed for initialisation, data order and dropout");
}

std::vector<Command> build_app(CLI::App& app, Options& o) {
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config, "key=value file; flags on the command line win");
  app.add_option("--manifest", o.manifest, "run manifest path (default: next to the main output)");
  app.set_version_flag("--version", kVersion);
  std::vector<Command> cmds;

  auto* tok = app.add_subcommand("tokenize", "word-piece tokenize text, one output line per input line");
  tok->add_option("--vocab", o.vocab, "vocabulary file");
  auto* text = tok->add_option("--text", o.text, "text to tokenize");
  tok->add_option("--file", o.file, "file to tokenize line by line")->excludes(text);
  tok->add_flag("--ids", o.ids, "print ids instead of pieces");
  cmds.push_back({tok, cmd_tokenize, "tokenize"});

  auto* ing = app.add_subcommand("ingest", "validate and normalise a corpus into JSONL");
  ing->add_option("--input", o.inputs, "input files")->required();
  ing->add_option("--format", o.format, "jsonl or sections");
  ing->add_option("--mode", o.mode, "document or discourse");
  ing->add_option("--separator", o.separator, "section header prefix");
  ing->add_option("--vocab", o.vocab, "vocabulary file");
  ing->add_option("--out", o.out, "output JSONL")->required();
  cmds.push_back({ing, cmd_ingest, "ingest"});

  auto* gen = app.add_subcommand("generate", "synthetic corpora");
  gen->require_subcommand(1);
  auto* choi = gen->add_subcommand("choi", "documents stitched from segments of pool documents");
  choi->add_option("--count", o.count, "documents");
  choi->add_option("--seed", o.seed, "seed");
  choi->add_option("--segments", o.segments, "segments per document");
  choi->add_option("--segment-len", o.segment_len, "sentences per segment, lo-hi");
  choi->add_flag("--prefix-only", o.prefix_only, "take each segment from the start of its pool document");
  choi->add_option("--pool", o.pool, "pool JSONL (default: generated cluster pool)");
  choi->add_option("--vocab", o.vocab, "vocabulary for --pool");
  choi->add_option("--pool-docs", o.pool_docs, "generated pool size");
  choi->add_option("--clusters", o.clusters, "vocabulary clusters of the generated pool");
  choi->add_option("--out", o.out, "output JSONL (vocabulary goes to <out>.vocab)")->required();
  cmds.push_back({choi, cmd_generate_choi, "generate choi"});
  auto* topic = gen->add_subcommand("topic", "documents whose segments use disjoint topic vocabularies");
  topic->add_option("--count", o.count, "documents");
  topic->add_option("--seed", o.seed, "seed");
  topic->add_option("--topics", o.topics, "number of topics");
  topic->add_option("--words-per-topic", o.words_per_topic, "vocabulary slice per topic");
  topic->add_option("--sentence-len", o.sentence_len, "words per sentence, lo-hi");
  topic->add_option("--segment-len", o.topic_segment_len, "sentences per segment, lo-hi");
  topic->add_option("--segments", o.segments_per_doc, "segments per document, lo-hi");
  topic->add_option("--out", o.out, "output JSONL (vocabulary goes to <out>.vocab)")->required();
  cmds.push_back({topic, cmd_generate_topic, "generate topic"});

  auto* tr = app.add_subcommand("train", "train a segmentation model");
  add_train_flags(tr, o);
  tr->add_option("--checkpoint", o.checkpoint, "output checkpoint directory")->required();
  cmds.push_back({tr, cmd_train, "train"});

  auto* di = app.add_subcommand("distill", "train a student on labels and teacher logits");
  add_train_flags(di, o);
  di->add_option("--alpha", o.alpha, "weight of the label loss; 1 - alpha goes to logit MSE");
  di->add_option("--teacher-logits", o.teacher_logits, "logit store (written when --teacher is given)")->required();
  di->add_option("--teacher", o.teacher, "teacher checkpoint to record logits from");
  di->add_option("--checkpoint", o.checkpoint, "output checkpoint directory")->required();
  cmds.push_back({di, cmd_distill, "distill"});

  auto* seg = app.add_subcommand("segment", "predict boundaries with a checkpoint");
  seg->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  seg->add_option("--input", o.input, "input JSONL")->required();
  seg->add_option("--out", o.out, "output JSONL with predicted boundaries")->required();
  seg->add_option("--vocab", o.vocab, "vocabulary when the checkpoint has none");
  seg->add_option("--threshold", o.threshold, "decision threshold (default: the checkpoint's)");
  seg->add_option("--probs", o.probs, "also write per-break probabilities (TSV)");
  cmds.push_back({seg, cmd_segment, "segment"});

  auto* ev = app.add_subcommand("evaluate", "score predicted boundaries against a reference");
  ev->add_option("--pred", o.pred, "predicted JSONL")->required();
  ev->add_option("--ref", o.ref, "reference JSONL")->required();
  ev->add_option("--mode", o.mode, "document or discourse");
  ev->add_flag("--pk", o.pk, "report Pk");
  ev->add_flag("--pk-detail", o.pk_detail, "report macro and pooled Pk");
  ev->add_option("--bootstrap", o.bootstrap, "bootstrap resamples for standard deviations");
  ev->add_option("--kfold", o.kfold, "average scores over k folds of the documents");
  ev->add_option("--seed", o.seed, "seed for bootstrap and folds");
  ev->add_option("--report", o.report, "JSON report file");
  cmds.push_back({ev, cmd_evaluate, "evaluate"});

  auto* pa = app.add_subcommand("params", "count trainable parameters");
  pa->add_flag("--arch-table", o.arch_table, "the nine encoder sizes of the architecture study");
  pa->add_option("--arch", o.arch, "cross, bilstm or hier");
  pa->add_option("--encoder", o.encoder, "L<layers>-H<hidden>-A<heads>");
  pa->add_option("--vocab-size", o.vocab_size, "vocabulary size");
  pa->add_option("--max-positions", o.max_positions, "position embeddings");
  pa->add_option("--lstm-hidden", o.lstm_hidden, "bilstm hidden size per direction");
  pa->add_option("--doc-layers", o.doc_layers, "hierarchical document layers (0: same as encoder)");
  cmds.push_back({pa, cmd_params, "params"});

  auto* ab = app.add_subcommand("ablate", "train and test one cross-segment model per context size");
  add_train_flags(ab, o);
  ab->add_option("--test", o.test, "test JSONL");
  ab->add_option("--contexts", o.contexts, "comma-separated n-m pairs");
  ab->add_option("--seeds", o.seeds, "runs per context (seeds seed, seed+1, ...)");
  ab->add_option("--report", o.report, "also write the table here");
  cmds.push_back({ab, cmd_ablate, "ablate"});
  return cmds;
}

const Command* selected(const std::vector<Command>& cmds) {
  const Command* pick = nullptr;
  for (const auto& c : cmds) {
    if (c.app->parsed()) pick = &c;
  }
  return pick;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    std::string key = trim(line.substr(0, eq));
    if (key.starts_with("--")) key = key.substr(2);
    kv.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

std::vector<std::string> reversed(std::vector<std::string> v) {
  std::reverse(v.begin(), v.end());
  return v;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  std::size_t threads = 1;
  if (const char* env = std::getenv("SEGKIT_THREADS")) {
    char* end = nullptr;
    const long t = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || t < 1) {
      err << "SEGKIT_THREADS must be a positive integer, got '" << env << "'\n";
      return 2;
    }
    threads = static_cast<std::size_t>(t);
  }

  Options o;
  CLI::App app{"Text segmentation toolkit", "segkit"};
  auto cmds = build_app(app, o);
  if (args.empty()) {
    err << app.help();
    return 2;
  }
  std::vector<std::string> final_args = args;
  try {
    app.parse(reversed(args));
    if (!o.config.empty()) {
      // flags > config file > defaults: only unset options take file values
      const Command* cmd = selected(cmds);
      for (const auto& [key, value] : read_config_file(o.config)) {
        if (key == "config" || key == "manifest") throw UsageError("config key '" + key + "' is not allowed");
        const CLI::Option* opt = cmd->app->get_option_no_throw("--" + key);
        if (opt == nullptr) throw UsageError("unknown config key '" + key + "' for " + cmd->name);
        if (opt->count() == 0) final_args.push_back("--" + key + "=" + value);
      }
      o = Options{};
      app.clear();
      app.parse(reversed(final_args));
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  const Command* cmd = selected(cmds);
  if (const CLI::Option* w = cmd->app->get_option_no_throw("--warmup")) o.warmup_set = w->count() > 0;
  RunManifest manifest;
  manifest.command = cmd->name;
  manifest.threads = threads;
  for (const CLI::Option* opt : cmd->app->get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string value;
    if (opt->get_expected_max() == 0) {
      value = opt->count() > 0 ? "true" : "false";
    } else if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    } else {
      value = opt->get_default_str();
    }
    manifest.flags.emplace_back(opt->get_name(), value);
  }
  if (!o.config.empty()) manifest.flags.emplace_back("--config", o.config);
  try {
    cmd->run(o, out, manifest);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  manifest.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::filesystem::path manifest_path = o.manifest;
  if (manifest_path.empty()) {
    if (!o.checkpoint.empty() && (cmd->name == "train" || cmd->name == "distill")) {
      manifest_path = std::filesystem::path(o.checkpoint) / "manifest.json";
    } else if (!o.out.empty()) {
      manifest_path = o.out + ".manifest.json";
    } else if (!o.report.empty()) {
      manifest_path = o.report + ".manifest.json";
    }
  }
  if (!manifest_path.empty()) {
    try {
      write_atomic(manifest_path, manifest.to_json());
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace segkit
