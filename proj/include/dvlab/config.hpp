#pragma once

// Line-oriented run configuration:
//
//   # comment
//   key = value
//   P = 0.7 0.3; 0.4 0.6      (matrix rows separated by ';')
//   tail_n = 100, 200, 400    (lists separated by ',' or blanks)
//
// Values are typed on access. Every access records the resolved value, so
// the manifest can list the full experiment including defaults.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "dvlab/errors.hpp"

namespace dvlab {

/// Invalid config: carries the source line (0 when not tied to a line) and
/// the field name.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& source, int line, const std::string& field, const std::string& what);
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  const std::string& source() const { return source_; }

  std::string get_string(const std::string& key, const std::string& fallback);
  std::string require_string(const std::string& key);
  double get_double(const std::string& key, double fallback);
  long get_long(const std::string& key, long fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback);
  std::vector<double> require_doubles(const std::string& key);
  std::vector<long> get_longs(const std::string& key, const std::vector<long>& fallback);
  Eigen::MatrixXd require_matrix(const std::string& key);
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback);

  /// Replaces (or adds) a value; used for command-line overrides.
  void set(const std::string& key, const std::string& value);

  /// Rejects keys outside `allowed`, naming the first offender's line.
  void require_known(const std::set<std::string>& allowed) const;

  /// Throws a ConfigError tied to the key's line.
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  /// Every accessed key with its typed value, in key order.
  const nlohmann::json& resolved() const { return resolved_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  const Entry* find(const std::string& key) const;
  double to_double(const std::string& key, const std::string& token) const;
  long to_long(const std::string& key, const std::string& token) const;

  std::string source_;
  std::map<std::string, Entry> entries_;
  nlohmann::json resolved_ = nlohmann::json::object();
};

}  // namespace dvlab
