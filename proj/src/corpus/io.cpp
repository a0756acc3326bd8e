#include <fstream>
#include <sstream>

#include <json.hpp>

#include "segkit/corpus.hpp"
#include "segkit/error.hpp"

namespace segkit {
namespace {

using nlohmann::json;

[[noreturn]] void bad_line(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> string_array(const json& j, const char* field, const std::filesystem::path& path,
                                      std::size_t line) {
  if (!j.is_array()) bad_line(path, line, std::string("'") + field + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& w : j) {
    if (!w.is_string()) bad_line(path, line, std::string("'") + field + "' must contain only strings");
    out.push_back(w.get<std::string>());
  }
  return out;
}

std::vector<std::size_t> index_array(const json& record, const char* field, const std::filesystem::path& path,
                                     std::size_t line) {
  if (!record.contains(field)) return {};
  const json& j = record[field];
  if (!j.is_array()) bad_line(path, line, std::string("'") + field + "' must be an array of integers");
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      bad_line(path, line, std::string("'") + field + "' must contain non-negative integers");
    }
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

json document_record(const Document& doc) {
  json sentences = json::array();
  for (const auto& s : doc.sentences) sentences.push_back(s.words);
  return json{{"id", doc.id}, {"sentences", sentences}, {"boundaries", doc.boundaries}};
}

void write_lines(const std::vector<json>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

Dataset ingest_jsonl(const std::filesystem::path& path, UnitMode mode, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Dataset data;
  data.mode = mode;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      bad_line(path, line, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) bad_line(path, line, "record must be a JSON object");
    if (!record.contains("id") || !record["id"].is_string()) bad_line(path, line, "missing string field 'id'");
    try {
      if (mode == UnitMode::kDocument) {
        if (!record.contains("sentences") || !record["sentences"].is_array()) {
          bad_line(path, line, "missing array field 'sentences'");
        }
        Document doc;
        doc.id = record["id"].get<std::string>();
        for (const auto& s : record["sentences"]) {
          doc.sentences.push_back(make_sentence(string_array(s, "sentences", path, line), vocab));
        }
        doc.boundaries = index_array(record, "boundaries", path, line);
        validate(doc);
        data.docs.push_back(std::move(doc));
      } else {
        if (!record.contains("words")) bad_line(path, line, "missing array field 'words'");
        DiscourseSentence sent;
        sent.id = record["id"].get<std::string>();
        sent.words = string_array(record["words"], "words", path, line);
        sent.edu_starts = index_array(record, "edu_starts", path, line);
        validate(sent);
        data.sentences.push_back(std::move(sent));
      }
    } catch (const InvalidArgument& e) {
      bad_line(path, line, e.what());
    }
  }
  return data;
}

void export_jsonl(const std::vector<Document>& docs, const std::filesystem::path& path) {
  std::vector<json> records;
  for (const auto& d : docs) records.push_back(document_record(d));
  write_lines(records, path);
}

void export_jsonl(const Dataset& data, const std::filesystem::path& path) {
  if (data.mode == UnitMode::kDocument) {
    export_jsonl(data.docs, path);
    return;
  }
  std::vector<json> records;
  for (const auto& s : data.sentences) {
    records.push_back(json{{"id", s.id}, {"words", s.words}, {"edu_starts", s.edu_starts}});
  }
  write_lines(records, path);
}

Document ingest_section_text(const std::filesystem::path& path, const Vocabulary& vocab,
                             const std::string& separator_prefix) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Document doc;
  doc.id = path.stem().string();
  std::string text;
  while (std::getline(in, text)) {
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (!separator_prefix.empty() && text.starts_with(separator_prefix)) {
      if (!doc.sentences.empty()) doc.boundaries.push_back(doc.sentences.size() - 1);
      continue;
    }
    std::istringstream words_in(text);
    std::vector<std::string> words;
    for (std::string w; words_in >> w;) words.push_back(w);
    if (!words.empty()) doc.sentences.push_back(make_sentence(std::move(words), vocab));
  }
  if (doc.sentences.empty()) throw FormatError(path.string() + ": no sentences");
  // a header after the last sentence marks the implicit final boundary
  std::erase_if(doc.boundaries, [&](std::size_t b) { return b + 1 >= doc.sentences.size(); });
  validate(doc);
  return doc;
}

}  // namespace segkit
