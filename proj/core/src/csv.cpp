#include "befa/csv.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "befa/error.hpp"

namespace befa {

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::size_t line) {
  const std::string t = trim(s);
  if (t == "NaN") return std::nan("");
  if (t == "Inf") return HUGE_VAL;
  if (t == "-Inf") return -HUGE_VAL;
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ParseError("expected a number, got '" + t + "'", line);
  }
  return v;
}

long parse_long(std::string_view s, std::size_t line) {
  const std::string t = trim(s);
  long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ParseError("expected an integer, got '" + t + "'", line);
  }
  return v;
}

CsvReader::CsvReader(const std::filesystem::path& path) : in_(path), path_(path) {
  if (!in_) throw Error("cannot open " + path.string());
}

std::vector<std::string> CsvReader::read_header() {
  std::vector<std::string> fields;
  if (!next(fields)) throw ParseError(path_.string() + ": missing header row", 1);
  return fields;
}

void CsvReader::expect_header(const std::vector<std::string>& expected) {
  const auto got = read_header();
  if (got != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i) {
      want += (i ? "," : "") + expected[i];
    }
    throw ParseError(path_.string() + ": header must be '" + want + "'", line_);
  }
}

bool CsvReader::next(std::vector<std::string>& fields) {
  std::string raw;
  while (std::getline(in_, raw)) {
    ++line_;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty()) continue;
    fields = split_csv(raw);
    return true;
  }
  return false;
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw Error("cannot write " + path.string());
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << fields[i];
  }
  out_ << '\n';
}

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string t = trim(raw);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected 'key = value', got '" + t + "'", line);
    }
    KeyValue kv{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), line};
    if (kv.key.empty()) throw ParseError("empty key", line);
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<KeyValue> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::vector<std::string> split_list(std::string_view value, std::size_t line) {
  std::vector<std::string> out;
  for (const auto& item : split_csv(value)) {
    auto t = trim(item);
    if (t.empty()) throw ParseError("empty item in list '" + std::string(value) + "'", line);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace befa
