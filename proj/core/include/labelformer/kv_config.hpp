#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace labelformer {

// INI-style key-value configuration. Keys are "section.key"; keys before
// the first section header have no prefix.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& source_name = "<config>");
  static KvConfig load(const std::filesystem::path& path);
  std::string dump() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, bool value);

  // Overlays every entry of `other` on top of this config.
  void merge(const KvConfig& other);
  // Throws std::invalid_argument naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  std::string source_ = "<config>";
  std::map<std::string, std::string> values_;
};

}  // namespace labelformer
