#include "dvlab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace dvlab {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}

// A number, "pi", or a quotient of two such.
bool parse_number(const std::string& token, double& out) {
  const auto slash = token.find('/');
  if (slash != std::string::npos) {
    double a = 0.0, b = 0.0;
    if (!parse_number(token.substr(0, slash), a) || !parse_number(token.substr(slash + 1), b)) return false;
    if (b == 0.0) return false;
    out = a / b;
    return true;
  }
  if (token == "pi") {
    out = std::numbers::pi;
    return true;
  }
  if (token.size() > 2 && token.ends_with("pi")) {
    double a = 0.0;
    if (!parse_number(token.substr(0, token.size() - 2), a)) return false;
    out = a * std::numbers::pi;
    return true;
  }
  const char* first = token.data();
  const char* last = first + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && first != last;
}

std::string describe(const std::string& source, int line, const std::string& field, const std::string& what) {
  std::ostringstream os;
  os << source;
  if (line > 0) os << ":" << line;
  os << ": field '" << field << "': " << what;
  return os.str();
}

}  // namespace

ConfigError::ConfigError(const std::string& source, int line, const std::string& field, const std::string& what)
    : InvalidArgument(describe(source, line, field, what)), line_(line), field_(field) {}

Config Config::parse(std::istream& in, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line, text, "expected 'key = value'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(source, line, key, "invalid key name");
    if (value.empty()) throw ConfigError(source, line, key, "empty value");
    if (cfg.entries_.count(key))
      throw ConfigError(source, line, key,
                        "duplicate key (first set on line " + std::to_string(cfg.entries_[key].line) + ")");
    cfg.entries_[key] = Entry{value, line};
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), 0, "config", "cannot open file");
  return parse(in, path.string());
}

const Config::Entry* Config::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void Config::fail(const std::string& key, const std::string& what) const {
  const Entry* e = find(key);
  throw ConfigError(source_, e ? e->line : 0, key, what);
}

double Config::to_double(const std::string& key, const std::string& token) const {
  double v = 0.0;
  if (!parse_number(token, v) || !std::isfinite(v)) fail(key, "expected a finite number, got '" + token + "'");
  return v;
}

long Config::to_long(const std::string& key, const std::string& token) const {
  long v = 0;
  const char* first = token.data();
  const char* last = first + token.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) fail(key, "expected an integer, got '" + token + "'");
  return v;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) {
  const Entry* e = find(key);
  std::string v = e ? e->value : fallback;
  resolved_[key] = v;
  return v;
}

std::string Config::require_string(const std::string& key) {
  if (!find(key)) fail(key, "required field is missing");
  return get_string(key, {});
}

double Config::get_double(const std::string& key, double fallback) {
  const Entry* e = find(key);
  const double v = e ? to_double(key, e->value) : fallback;
  resolved_[key] = v;
  return v;
}

long Config::get_long(const std::string& key, long fallback) {
  const Entry* e = find(key);
  const long v = e ? to_long(key, e->value) : fallback;
  resolved_[key] = v;
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) {
  const Entry* e = find(key);
  std::uint64_t v = fallback;
  if (e) {
    const char* first = e->value.data();
    const char* last = first + e->value.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
      fail(key, "expected an unsigned 64-bit integer, got '" + e->value + "'");
  }
  resolved_[key] = v;
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) {
  const Entry* e = find(key);
  bool v = fallback;
  if (e) {
    if (e->value == "true" || e->value == "1")
      v = true;
    else if (e->value == "false" || e->value == "0")
      v = false;
    else
      fail(key, "expected true or false, got '" + e->value + "'");
  }
  resolved_[key] = v;
  return v;
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) {
  const Entry* e = find(key);
  std::vector<double> v = fallback;
  if (e) {
    v.clear();
    for (const auto& t : split_tokens(e->value)) v.push_back(to_double(key, t));
  }
  resolved_[key] = v;
  return v;
}

std::vector<double> Config::require_doubles(const std::string& key) {
  if (!find(key)) fail(key, "required field is missing");
  return get_doubles(key, {});
}

std::vector<long> Config::get_longs(const std::string& key, const std::vector<long>& fallback) {
  const Entry* e = find(key);
  std::vector<long> v = fallback;
  if (e) {
    v.clear();
    for (const auto& t : split_tokens(e->value)) v.push_back(to_long(key, t));
  }
  resolved_[key] = v;
  return v;
}

std::vector<std::string> Config::get_strings(const std::string& key, const std::vector<std::string>& fallback) {
  const Entry* e = find(key);
  std::vector<std::string> v = e ? split_tokens(e->value) : fallback;
  resolved_[key] = v;
  return v;
}

Eigen::MatrixXd Config::require_matrix(const std::string& key) {
  const Entry* e = find(key);
  if (!e) fail(key, "required field is missing");
  std::vector<std::vector<double>> rows;
  std::stringstream ss(e->value);
  std::string row;
  while (std::getline(ss, row, ';')) {
    auto tokens = split_tokens(row);
    if (tokens.empty()) continue;
    std::vector<double> r;
    for (const auto& t : tokens) r.push_back(to_double(key, t));
    if (!rows.empty() && r.size() != rows.front().size())
      fail(key, "row " + std::to_string(rows.size()) + " has " + std::to_string(r.size()) + " entries, expected " +
                    std::to_string(rows.front().size()));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) fail(key, "empty matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    j.push_back(rows[i]);
  }
  resolved_[key] = j;
  return m;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = entries_.find(key);
  if (it == entries_.end())
    entries_[key] = Entry{value, 0};
  else
    it->second.value = value;
}

void Config::require_known(const std::set<std::string>& allowed) const {
  for (const auto& [key, e] : entries_)
    if (!allowed.count(key)) throw ConfigError(source_, e.line, key, "unknown key for this subcommand");
}

}  // namespace dvlab
