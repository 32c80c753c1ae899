#include "labelformer/kv_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "labelformer/error.hpp"
#include "labelformer/fileio.hpp"

namespace labelformer {

namespace pt = boost::property_tree;

KvConfig KvConfig::parse(const std::string& text, const std::string& source_name) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source_name, e.line(), e.message());
  }
  KvConfig cfg;
  cfg.source_ = source_name;
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      cfg.values_[key] = node.get_value<std::string>();
      continue;
    }
    for (const auto& [sub, leaf] : node) cfg.values_[key + "." + sub] = leaf.get_value<std::string>();
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  return parse(fileio::read_text(path), path.string());
}

std::string KvConfig::dump() const {
  pt::ptree tree;
  std::map<std::string, pt::ptree> sections;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      tree.push_back({key, pt::ptree(value)});
    } else {
      sections[key.substr(0, dot)].push_back({key.substr(dot + 1), pt::ptree(value)});
    }
  }
  for (auto& [name, section] : sections) tree.push_back({name, std::move(section)});
  std::ostringstream out;
  pt::write_ini(out, tree);
  return out.str();
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw std::invalid_argument(source_ + ": " + key + " = '" + s + "' is not a number");
  }
  return v;
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw std::invalid_argument(source_ + ": " + key + " = '" + s + "' is not an integer");
  }
  return v;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument(source_ + ": " + key + " = '" + s + "' is not a boolean");
}

void KvConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

void KvConfig::set(const std::string& key, double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  values_[key] = buf;
}

void KvConfig::set(const std::string& key, std::int64_t value) { values_[key] = std::to_string(value); }

void KvConfig::set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

void KvConfig::merge(const KvConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

void KvConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) throw std::invalid_argument(source_ + ": unknown key '" + k + "'");
  }
}

}  // namespace labelformer
