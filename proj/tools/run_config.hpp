#pragma once

// Flat `key = value` run configuration with [section] headers. Keys are
// addressed as "section.key"; anything not in the schema is rejected.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace invlens::cli {

struct ConfigError : std::runtime_error {
  ConfigError(std::size_t line, std::string key, const std::string& message);
  std::size_t line;  // 0 when not tied to a file line
  std::string key;
};

// A required input file that does not exist.
struct MissingInput : std::runtime_error {
  explicit MissingInput(std::string path);
  std::string path;
};

class RunConfig {
 public:
  // All keys at their defaults.
  RunConfig();

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  std::string str(const std::string& key) const { return get(key); }
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> sizes(const std::string& key) const;

  // Downstream artifact locations, derived from run.dir unless set.
  std::string path(const std::string& key) const;

  // Canonical text form; parse(text()) reproduces the config.
  std::string text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace invlens::cli
