#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace befa {

/// Splits one CSV record on commas. Quoting is not supported; identifiers
/// in this project never contain commas.
std::vector<std::string> split_csv(std::string_view line);

std::string trim(std::string_view s);

/// Shortest decimal representation that round-trips exactly.
std::string format_double(double v);

/// Parses a finite double; throws ParseError (with `line`) otherwise.
double parse_double(std::string_view s, std::size_t line = 0);
long parse_long(std::string_view s, std::size_t line = 0);

/// Line-oriented CSV reader that tracks 1-based line numbers.
class CsvReader {
 public:
  explicit CsvReader(const std::filesystem::path& path);
  /// Reads the header row and checks it matches `expected` exactly.
  void expect_header(const std::vector<std::string>& expected);
  std::vector<std::string> read_header();
  /// Next non-empty record; false at end of file.
  bool next(std::vector<std::string>& fields);
  std::size_t line() const { return line_; }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  std::size_t line_ = 0;
};

/// Thin CSV writer; opens the file on construction and throws on failure.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);
  std::ofstream& stream() { return out_; }

 private:
  std::ofstream out_;
};

/// One `key = value` entry from a plain-text key-value file.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Reads `key = value` lines; `#` starts a comment; blank lines are skipped.
/// Order and duplicates are preserved.
std::vector<KeyValue> read_key_values(const std::filesystem::path& path);
std::vector<KeyValue> parse_key_values(std::string_view text);

/// Comma-separated list value, trimmed, empty items rejected.
std::vector<std::string> split_list(std::string_view value, std::size_t line = 0);

}  // namespace befa
