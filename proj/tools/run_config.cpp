#include "run_config.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include "befa/csv.hpp"
#include "befa/error.hpp"

namespace befa::cli {

namespace fs = std::filesystem;

RunConfig::RunConfig(std::string command, std::vector<Key> keys, std::vector<std::string> open_prefixes)
    : command_(std::move(command)), keys_(std::move(keys)), prefixes_(std::move(open_prefixes)) {
  for (const auto& k : keys_) {
    if (!k.value.empty()) values_[k.name] = k.value;
  }
}

bool RunConfig::accepts(const std::string& key) const {
  if (std::any_of(keys_.begin(), keys_.end(), [&](const Key& k) { return k.name == key; })) return true;
  return std::any_of(prefixes_.begin(), prefixes_.end(),
                     [&](const std::string& p) { return key.size() > p.size() && key.starts_with(p); });
}

void RunConfig::load_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  source_ = path;
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& kv : read_key_values(path)) {
    if (!accepts(kv.key)) {
      throw ConfigError(path.string() + ":" + std::to_string(kv.line) + ": unknown config key '" +
                        kv.key + "' for command '" + command_ + "'");
    }
    std::string value = kv.value;
    const auto it = std::find_if(keys_.begin(), keys_.end(), [&](const Key& k) { return k.name == kv.key; });
    if (it != keys_.end() && it->path && !value.empty() && fs::path(value).is_relative()) {
      value = (base / value).lexically_normal().string();
    }
    set(kv.key, value);
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!accepts(key)) throw ConfigError("unknown config key '" + key + "' for command '" + command_ + "'");
  const bool declared =
      std::any_of(keys_.begin(), keys_.end(), [&](const Key& k) { return k.name == key; });
  if (!declared && !values_.contains(key)) open_order_.push_back(key);
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const {
  const auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) {
    throw ConfigError("missing required setting '" + key + "' for command '" + command_ + "'");
  }
  return it->second;
}

fs::path RunConfig::get_path(const std::string& key) const { return fs::path(get(key)); }

int RunConfig::get_int(const std::string& key) const {
  try {
    return static_cast<int>(parse_long(get(key)));
  } catch (const ParseError&) {
    throw ConfigError("setting '" + key + "': expected an integer, got '" + get(key) + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const ParseError&) {
    throw ConfigError("setting '" + key + "': expected a number, got '" + get(key) + "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.starts_with('-')) {
    throw ConfigError("setting '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError("setting '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys_) {
    if (has(k.name)) out.emplace_back(k.name, values_.at(k.name));
  }
  for (const auto& k : open_order_) out.emplace_back(k, values_.at(k));
  return out;
}

void RunConfig::write(const fs::path& dir, const std::string& command_line) const {
  std::ofstream out(dir / "run_config.txt");
  if (!out) throw Error("cannot write " + (dir / "run_config.txt").string());
  out << "# befa " << command_ << "\n# " << command_line << '\n';
  if (!source_.empty()) out << "# config file: " << fs::absolute(source_).string() << '\n';
  for (const auto& [k, v] : resolved()) out << k << " = " << v << '\n';
  if (!source_.empty()) {
    std::error_code ec;
    fs::copy_file(source_, dir / "input_config.txt", fs::copy_options::overwrite_existing, ec);
    if (ec) throw Error("cannot copy " + source_.string() + ": " + ec.message());
  }
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("BEFA_THREADS"); env && *env) {
    long v = 0;
    try {
      v = parse_long(env);
    } catch (const ParseError&) {
      throw ConfigError(std::string("BEFA_THREADS must be a positive integer, got '") + env + "'");
    }
    if (v < 1) throw ConfigError("BEFA_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

fs::path resolve_out(const std::string& flag_value, const std::string& command,
                     const std::vector<fs::path>& inputs) {
  fs::path out;
  if (!flag_value.empty()) {
    out = flag_value;
  } else {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d_%H%M%S", &tm);
    const std::string base = "befa_" + command + "_" + stamp;
    out = base;
    for (int i = 2; fs::exists(out); ++i) out = base + "_" + std::to_string(i);
  }
  for (const auto& in : inputs) {
    std::error_code ec;
    if (fs::exists(out) && fs::exists(in) && fs::equivalent(out, in, ec)) {
      throw ConfigError("output directory " + out.string() + " is an input of this command");
    }
  }
  fs::create_directories(out);
  return out;
}

}  // namespace befa::cli
