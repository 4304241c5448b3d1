#pragma once

// Flat key=value run configuration with [section] prefixes, command-line
// overrides, and a stable content hash recorded in every artifact.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace laddernat {

class Config {
 public:
  Config() = default;
  static Config from_file(const std::string& path);

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  // "key=value"; throws std::invalid_argument naming the offending input.
  void apply_override(const std::string& keyval);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& def) const;
  long get_long(const std::string& key, long def) const;
  double get_double(const std::string& key, double def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;

  // Sorted "key=value" lines; the hash is FNV-1a64 over this text.
  std::string canonical() const;
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Number of worker threads from LADDERNAT_THREADS (default 1).
int worker_threads();

}  // namespace laddernat
