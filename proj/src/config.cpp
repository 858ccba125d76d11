#include "convgrade/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

namespace convgrade {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::vector<std::string> split_list(std::string v) {
  v = trim(v);
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::string section, line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    kv.values_[key] = unquote(trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

const std::string* KeyValues::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  return v ? *v : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument(*v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(source_ + ": '" + key + "' is not a number: " + *v);
  }
}

long long KeyValues::get_int(const std::string& key, long long fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  long long out = 0;
  auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size()) throw ConfigError(source_ + ": '" + key + "' is not an integer: " + *v);
  return out;
}

std::size_t KeyValues::get_size(const std::string& key, std::size_t fallback) const {
  const long long v = get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError(source_ + ": '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError(source_ + ": '" + key + "' is not a boolean: " + *v);
}

std::vector<double> KeyValues::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*v)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(source_ + ": '" + key + "' has a non-numeric entry: " + item);
    }
  }
  return out;
}

std::vector<std::string> KeyValues::get_strings(const std::string& key, const std::vector<std::string>& fallback) const {
  const auto* v = find(key);
  return v ? split_list(*v) : fallback;
}

std::vector<std::string> KeyValues::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) out.push_back(k);
  return out;
}

void KeyValues::reject_unused() const {
  const auto u = unused();
  if (u.empty()) return;
  std::string msg = source_ + ": unknown keys:";
  for (const auto& k : u) msg += " " + k;
  throw ConfigError(msg);
}

}  // namespace convgrade
