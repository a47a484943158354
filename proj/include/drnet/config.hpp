#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace drnet {

/// UTF-8 "key = value" configuration, one entry per line, '#' comments.
/// Entries are kept sorted so written files are diffable.
class KeyValues {
 public:
  static KeyValues parse(std::istream& is, const std::string& source = "<config>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const;

  /// Entries of other replace ours.
  void merge(const KeyValues& other);
  /// Throws when a key is not in valid; the message lists the valid keys.
  void require_known(std::span<const std::string> valid) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  void write(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> entries_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');
std::string join_ints(std::span<const int> values);
std::string join_doubles(std::span<const double> values);
/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace drnet
