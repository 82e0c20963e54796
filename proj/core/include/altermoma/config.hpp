#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace altermoma {

// Line-oriented "[section]" / "key = value" file. Comments start with '#' or
// ';'. Duplicate keys are rejected; parse and type errors name the file and
// line. Lookups fall back to the caller's default, so the full knob table
// lives with the consumers, not here.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text, const std::string& origin = "<config>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const;
  std::int64_t get_i64(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                      const std::vector<double>& fallback) const;

  // Command-line overrides route through here before hashing.
  void set(const std::string& section, const std::string& key, const std::string& value);

  // Every "section.key" present, sorted; consumers use it to reject typos.
  std::vector<std::string> keys() const;

  // Sorted, normalized rendering; the config hash is taken over this, so an
  // override changes the hash exactly like editing the file would.
  std::string canonical() const;

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::string origin_;
  std::map<std::string, Entry> kv_;  // "section.key" -> entry

  const Entry* find(const std::string& section, const std::string& key) const;
  [[noreturn]] void type_fail(const std::string& section, const std::string& key,
                              const Entry& e, const char* want) const;
};

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);

// Trailing comment line appended to every emitted CSV.
std::string config_hash_comment(const ConfigFile& cfg);

// Stable per-component seed derived from one master seed and a role tag.
std::uint64_t derive_seed(std::uint64_t master, const std::string& tag);

}  // namespace altermoma
