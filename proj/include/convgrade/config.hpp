#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "convgrade/errors.hpp"

namespace convgrade {

/// Flat "key = value" settings. "[section]" headers prefix later keys with
/// "section."; '#' starts a comment; values may be double-quoted.
class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "<config>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list; brackets are optional.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

  /// Keys never read through a getter.
  std::vector<std::string> unused() const;
  /// ConfigError listing any unused key.
  void reject_unused() const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  const std::string* find(const std::string& key) const;

  std::string source_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace convgrade
