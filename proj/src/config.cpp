#include "drnet/config.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "drnet/tensor.hpp"

namespace drnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    DRNET_CHECK(used == text.size(), "");
    return v;
  } catch (const std::exception&) {
    throw Error(detail::concat("config key '", key, "': '", text, "' is not a number"));
  }
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  DRNET_CHECK(ec == std::errc() && ptr == text.data() + text.size(), "config key '", key, "': '",
              text, "' is not an integer");
  return v;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string join_ints(std::span<const int> values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(values[i]);
  }
  return s;
}

std::string join_doubles(std::span<const double> values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    s += format_double(values[i]);
  }
  return s;
}

KeyValues KeyValues::parse(std::istream& is, const std::string& source) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    DRNET_CHECK(eq != std::string::npos, source, ":", lineno, ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    DRNET_CHECK(!key.empty(), source, ":", lineno, ": empty key");
    kv.entries_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  DRNET_CHECK(is, "cannot open config file ", path.string());
  return parse(is, path.string());
}

const std::string& KeyValues::get(const std::string& key) const {
  const auto it = entries_.find(key);
  DRNET_CHECK(it != entries_.end(), "missing config key '", key, "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key, get(key)) : fallback;
}

long long KeyValues::get_int(const std::string& key, long long fallback) const {
  return has(key) ? parse_int(key, get(key)) : fallback;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error(detail::concat("config key '", key, "': '", v, "' is not a boolean"));
}

std::vector<int> KeyValues::get_int_list(const std::string& key, std::vector<int> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& item : split_list(get(key))) out.push_back(static_cast<int>(parse_int(key, item)));
  return out;
}

std::vector<double> KeyValues::get_double_list(const std::string& key,
                                               std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_double(key, item));
  return out;
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

void KeyValues::require_known(std::span<const std::string> valid) const {
  for (const auto& [key, value] : entries_) {
    bool known = false;
    for (const auto& v : valid) known = known || v == key;
    if (known) continue;
    std::string list;
    for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
    throw Error(detail::concat("unknown config key '", key, "'; valid keys: ", list));
  }
}

void KeyValues::write(std::ostream& os) const {
  for (const auto& [k, v] : entries_) os << k << '=' << v << '\n';
}

void KeyValues::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  DRNET_CHECK(os, "cannot write config file ", path.string());
  write(os);
}

}  // namespace drnet
