#include "altermoma/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "altermoma/tensor.hpp"

namespace altermoma {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void parse_fail(const std::string& origin, int line, const std::string& msg) {
  throw std::invalid_argument(origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') parse_fail(origin, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) parse_fail(origin, line_no, "empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) parse_fail(origin, line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) parse_fail(origin, line_no, "empty key");
    if (section.empty()) parse_fail(origin, line_no, "key '" + key + "' outside any [section]");
    const std::string full = section + "." + key;
    if (cfg.kv_.count(full)) parse_fail(origin, line_no, "duplicate key '" + full + "'");
    cfg.kv_[full] = Entry{value, line_no};
  }
  return cfg;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
  auto it = kv_.find(section + "." + key);
  return it == kv_.end() ? nullptr : &it->second;
}

void ConfigFile::type_fail(const std::string& section, const std::string& key, const Entry& e,
                           const char* want) const {
  parse_fail(origin_, e.line,
             "[" + section + "] " + key + ": cannot parse '" + e.value + "' as " + want);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  const Entry* e = find(section, key);
  return e ? e->value : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(e->value, &pos);
  } catch (const std::exception&) {
    type_fail(section, key, *e, "a number");
  }
  if (pos != e->value.size()) type_fail(section, key, *e, "a number");
  return v;
}

std::uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                                  std::uint64_t fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(e->value, &pos);
  } catch (const std::exception&) {
    type_fail(section, key, *e, "an unsigned integer");
  }
  if (pos != e->value.size() || e->value[0] == '-')
    type_fail(section, key, *e, "an unsigned integer");
  return v;
}

std::int64_t ConfigFile::get_i64(const std::string& section, const std::string& key,
                                 std::int64_t fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(e->value, &pos);
  } catch (const std::exception&) {
    type_fail(section, key, *e, "an integer");
  }
  if (pos != e->value.size()) type_fail(section, key, *e, "an integer");
  return v;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::string v = e->value;
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  type_fail(section, key, *e, "a boolean");
}

std::vector<double> ConfigFile::get_double_list(const std::string& section,
                                                const std::string& key,
                                                const std::vector<double>& fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  std::vector<double> out;
  std::string item;
  std::istringstream in(e->value);
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &pos);
    } catch (const std::exception&) {
      type_fail(section, key, *e, "a comma-separated number list");
    }
    if (pos != t.size()) type_fail(section, key, *e, "a comma-separated number list");
    out.push_back(v);
  }
  if (out.empty()) type_fail(section, key, *e, "a comma-separated number list");
  return out;
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
  kv_[section + "." + key] = Entry{value, 0};
}

std::vector<std::string> ConfigFile::keys() const {
  std::vector<std::string> out;
  out.reserve(kv_.size());
  for (const auto& [k, e] : kv_) out.push_back(k);
  return out;
}

std::string ConfigFile::canonical() const {
  // kv_ is sorted by "section.key", so sections come out grouped and ordered.
  std::string out;
  std::string current;
  for (const auto& [full, e] : kv_) {
    const std::size_t dot = full.find('.');
    const std::string section = full.substr(0, dot);
    if (section != current) {
      out += "[" + section + "]\n";
      current = section;
    }
    out += full.substr(dot + 1) + " = " + e.value + "\n";
  }
  return out;
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string config_hash_comment(const ConfigFile& cfg) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "# config_hash=%016llx",
                static_cast<unsigned long long>(fnv1a64(cfg.canonical())));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& tag) {
  // splitmix64 finalizer over the tag hash mixed with the master; any two
  // distinct tags give unrelated streams for the same master.
  std::uint64_t z = fnv1a64(tag) ^ (master + 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace altermoma
