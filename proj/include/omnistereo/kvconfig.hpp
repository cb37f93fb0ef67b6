#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace omnistereo {

/// Flat "key = value" text documents. Lines starting with '#' and blank lines
/// are ignored; keys may repeat (order is preserved).
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueDoc load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  void add(const std::string& key, const std::string& value);
  std::string serialize() const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::vector<std::string> get_all(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  /// Keys present in the document that are not in `known`. Used to reject
  /// typos in config files.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

 private:
  std::string origin_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// "a=1 b=2,3" -> {a: "1", b: "2,3"}.
std::map<std::string, std::string> parse_attributes(const std::string& text);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);
std::vector<double> parse_double_list(const std::string& text, const std::string& what);

/// Shortest text that round-trips the double exactly.
std::string format_double(double value);

}  // namespace omnistereo
