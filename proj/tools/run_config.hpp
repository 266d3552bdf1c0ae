#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace befa::cli {

/// Settings of one command: a fixed set of keys with defaults, overlaid by an
/// optional config file and then by command-line flags. The resolved set is
/// written to every output directory as `run_config.txt`, which is itself a
/// valid `--config` for rerunning the command.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string value;   // default; empty means unset
    bool path = false;   // resolved against the config file's directory
  };

  RunConfig(std::string command, std::vector<Key> keys, std::vector<std::string> open_prefixes = {});

  /// Unknown keys throw ConfigError naming the key.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::filesystem::path get_path(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Keys that were set (by default, file or flag), in declaration order,
  /// followed by open-prefix keys in the order they were given.
  std::vector<std::pair<std::string, std::string>> resolved() const;

  const std::string& command() const { return command_; }
  const std::filesystem::path& source() const { return source_; }

  void write(const std::filesystem::path& dir, const std::string& command_line) const;

 private:
  bool accepts(const std::string& key) const;

  std::string command_;
  std::vector<Key> keys_;
  std::vector<std::string> prefixes_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> open_order_;
  std::filesystem::path source_;
};

/// `--threads` if given, else BEFA_THREADS, else the hardware concurrency.
int resolve_threads(int flag_value);

/// `--out` if given, else a fresh `befa_<command>_<timestamp>` directory under
/// the working directory. Refuses directories that are one of `inputs`.
std::filesystem::path resolve_out(const std::string& flag_value, const std::string& command,
                                  const std::vector<std::filesystem::path>& inputs);

}  // namespace befa::cli
