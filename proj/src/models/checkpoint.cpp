#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <optional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "segkit/models.hpp"

namespace segkit {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'G', 'K', '1'};

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string config_text(const ModelConfig& c) {
  const EncoderConfig& e = c.encoder;
  std::string out;
  auto line = [&](const char* key, const std::string& value) { out += fmt::format("{}={}\n", key, value); };
  line("arch", to_string(c.arch));
  line("L", std::to_string(e.layers));
  line("H", std::to_string(e.hidden));
  line("A", std::to_string(e.heads));
  line("ff", std::to_string(e.ff_size()));
  line("vocab", std::to_string(e.vocab));
  line("max_pos", std::to_string(e.max_positions));
  line("mode", to_string(c.mode));
  line("threshold", fmt::format("{}", c.threshold));
  line("type_vocab", std::to_string(e.type_vocab));
  line("dropout", fmt::format("{}", e.dropout));
  line("use_positions", bool_text(e.use_positions));
  line("use_types", bool_text(e.use_types));
  line("n", std::to_string(c.context_left));
  line("m", std::to_string(c.context_right));
  line("lstm_hidden", std::to_string(c.lstm_hidden));
  line("doc_layers", std::to_string(c.document_layers()));
  line("doc_positions", std::to_string(c.doc_positions));
  line("max_sentence_tokens", std::to_string(c.max_sentence_tokens));
  line("cls_id", std::to_string(c.cls_id));
  return out;
}

ModelConfig parse_config_text(const std::string& text) {
  using Kind = CheckpointError::Kind;
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty() || raw[0] == '#') continue;
    const auto eq = raw.find('=');
    if (eq == std::string::npos) {
      throw CheckpointError(Kind::kBadConfig, "config line " + std::to_string(lineno) + ": expected key=value");
    }
    kv[raw.substr(0, eq)] = raw.substr(eq + 1);
  }
  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto need = [&](const char* key) {
    auto v = take(key);
    if (!v) throw CheckpointError(Kind::kBadConfig, std::string("config is missing '") + key + "'");
    return *v;
  };
  auto as_size = [](const char* key, const std::string& v) {
    std::size_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw CheckpointError(Kind::kBadConfig, std::string("config '") + key + "': not an integer: " + v);
    }
    return x;
  };
  auto as_double = [](const char* key, const std::string& v) {
    double x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw CheckpointError(Kind::kBadConfig, std::string("config '") + key + "': not a number: " + v);
    }
    return x;
  };
  auto as_bool = [](const char* key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw CheckpointError(Kind::kBadConfig, std::string("config '") + key + "': expected true/false: " + v);
  };

  ModelConfig c;
  try {
    c.arch = parse_arch(need("arch"));
    c.mode = parse_unit_mode(need("mode"));
  } catch (const InvalidArgument& e) {
    throw CheckpointError(Kind::kBadConfig, std::string("config: ") + e.what());
  }
  EncoderConfig& e = c.encoder;
  e.layers = as_size("L", need("L"));
  e.hidden = as_size("H", need("H"));
  e.heads = as_size("A", need("A"));
  e.ff = as_size("ff", need("ff"));
  e.vocab = as_size("vocab", need("vocab"));
  e.max_positions = as_size("max_pos", need("max_pos"));
  c.threshold = as_double("threshold", need("threshold"));
  if (auto v = take("type_vocab")) e.type_vocab = as_size("type_vocab", *v);
  if (auto v = take("dropout")) e.dropout = as_double("dropout", *v);
  if (auto v = take("use_positions")) e.use_positions = as_bool("use_positions", *v);
  if (auto v = take("use_types")) e.use_types = as_bool("use_types", *v);
  if (auto v = take("n")) c.context_left = as_size("n", *v);
  if (auto v = take("m")) c.context_right = as_size("m", *v);
  if (auto v = take("lstm_hidden")) c.lstm_hidden = as_size("lstm_hidden", *v);
  if (auto v = take("doc_layers")) c.doc_layers = as_size("doc_layers", *v);
  if (auto v = take("doc_positions")) c.doc_positions = as_size("doc_positions", *v);
  if (auto v = take("max_sentence_tokens")) c.max_sentence_tokens = as_size("max_sentence_tokens", *v);
  if (auto v = take("cls_id")) c.cls_id = static_cast<TokenId>(as_size("cls_id", *v));
  if (!kv.empty()) throw CheckpointError(Kind::kBadConfig, "config has unknown key '" + kv.begin()->first + "'");
  try {
    c.validate();
  } catch (const InvalidArgument& ex) {
    throw CheckpointError(Kind::kBadConfig, std::string("config: ") + ex.what());
  }
  return c;
}

namespace {

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename V>
  V get() {
    V v;
    need(sizeof(V));
    std::memcpy(&v, data_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const char* raw(std::size_t n) {
    need(n);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (data_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::kTruncated, path_ + ": truncated at byte " + std::to_string(pos_));
    }
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace

template <typename T>
void save_checkpoint(const SegmentationModel<T>& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "config", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "config").string());
    out << config_text(model.config());
  }
  std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "weights.bin").string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params().size()));
  for (const Parameter<T>& p : model.params()) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(out, dtype_code<T>());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.shape().size()));
    for (std::size_t d : p.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.value.buffer().data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
  if (!out) throw IoError("write failed for " + (dir / "weights.bin").string());
}

template <typename T>
SegmentationModel<T> load_checkpoint(const std::filesystem::path& dir) {
  using Kind = CheckpointError::Kind;
  ModelConfig config = parse_config_text(slurp(dir / "config"));
  SegmentationModel<T> model(config, 0);
  const std::string path = (dir / "weights.bin").string();
  Reader r(slurp(dir / "weights.bin"), path);
  if (r.bytes(4) != std::string(kMagic, 4)) throw CheckpointError(Kind::kBadMagic, path + ": not a weights file");
  const auto count = r.get<std::uint32_t>();
  if (count != model.params().size()) {
    throw CheckpointError(Kind::kMismatch, path + ": " + std::to_string(count) + " tensors, config implies " +
                                               std::to_string(model.params().size()));
  }
  for (Parameter<T>& p : model.params()) {
    const std::string name = r.bytes(r.get<std::uint16_t>());
    if (name != p.name) throw CheckpointError(Kind::kMismatch, path + ": expected tensor " + p.name + ", found " + name);
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != p.value.shape()) {
      throw CheckpointError(Kind::kMismatch, path + ": tensor " + name + " has shape " + to_string(shape) +
                                                 ", config implies " + to_string(p.value.shape()));
    }
    auto& buf = p.value.buffer();
    if (dtype == 0) {
      const char* src = r.raw(buf.size() * sizeof(float));
      for (std::size_t i = 0; i < buf.size(); ++i) {
        float f;
        std::memcpy(&f, src + i * sizeof(float), sizeof(float));
        buf[i] = static_cast<T>(f);
      }
    } else if (dtype == 1) {
      const char* src = r.raw(buf.size() * sizeof(double));
      for (std::size_t i = 0; i < buf.size(); ++i) {
        double d;
        std::memcpy(&d, src + i * sizeof(double), sizeof(double));
        buf[i] = static_cast<T>(d);
      }
    } else {
      throw CheckpointError(Kind::kMismatch, path + ": tensor " + name + " has unknown dtype " + std::to_string(dtype));
    }
  }
  if (!r.done()) throw CheckpointError(Kind::kMismatch, path + ": trailing bytes after the last tensor");
  return model;
}

template void save_checkpoint<float>(const SegmentationModel<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const SegmentationModel<double>&, const std::filesystem::path&);
template SegmentationModel<float> load_checkpoint<float>(const std::filesystem::path&);
template SegmentationModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace segkit
