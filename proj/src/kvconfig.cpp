#include "omnistereo/kvconfig.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "omnistereo/errors.hpp"

namespace omnistereo {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(const std::string& text, const std::string& origin) {
  KeyValueDoc doc;
  doc.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    doc.entries_.emplace_back(std::move(key), trim(t.substr(eq + 1)));
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

void KeyValueDoc::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KeyValueDoc::add(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
}

std::string KeyValueDoc::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void KeyValueDoc::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << serialize();
}

bool KeyValueDoc::has(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueDoc::get(const std::string& key) const {
  // Last assignment wins.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->first == key) return it->second;
  return std::nullopt;
}

std::vector<std::string> KeyValueDoc::get_all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (k == key) out.push_back(v);
  return out;
}

std::string KeyValueDoc::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueDoc::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  return v ? parse_double(*v, origin_ + ": " + key) : fallback;
}

long long KeyValueDoc::get_int(const std::string& key, long long fallback) const {
  const auto v = get(key);
  return v ? parse_int(*v, origin_ + ": " + key) : fallback;
}

bool KeyValueDoc::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(origin_ + ": " + key + ": expected a boolean, got '" + *v + "'");
}

std::vector<std::string> KeyValueDoc::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
  return out;
}

std::map<std::string, std::string> parse_attributes(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("malformed attribute '" + tok + "' (expected name=value)");
    out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(what + ": expected a number, got '" + text + "'");
  return value;
}

long long parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(what + ": expected an integer, got '" + text + "'");
  return value;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto end = comma == std::string::npos ? text.size() : comma;
    out.push_back(parse_double(text.substr(start, end - start), what));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace omnistereo
