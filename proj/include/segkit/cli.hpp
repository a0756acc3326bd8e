#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace segkit {

inline constexpr const char* kVersion = "0.1.0";

// Runs one `segkit` command line (args exclude the program name). Returns
// 0 on success, 2 on a usage error, 1 on a runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(std::string_view data);
// Hash of a file's bytes; throws IoError when unreadable.
std::string sha256_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view content);

struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> flags;  // every option, after config merging
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
  std::string version = kVersion;
  std::size_t threads = 1;
  double seconds = 0.0;

  // Records a file, or every regular file under a directory (sorted).
  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  std::string to_json() const;
};

}  // namespace segkit
