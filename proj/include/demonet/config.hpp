#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "demonet/common.hpp"

namespace demonet::config {

// Plain-text configuration: `[section]` headers and `key = value` lines.
// Every key is validated against the schema; unknown keys are rejected. The
// effective (defaults-applied) form serializes canonically so runs can be
// reproduced from the file written next to their outputs.
class Config {
 public:
  Config();  // defaults only

  static Config load(const std::string& path);
  static Config parse(const std::string& text, const std::string& origin);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_str(const std::string& section, const std::string& key) const;
  double get_num(const std::string& section, const std::string& key) const;
  long get_int(const std::string& section, const std::string& key) const;
  std::vector<double> get_nums(const std::string& section, const std::string& key) const;
  std::vector<long> get_ints(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  // Canonical serialization of the fully-resolved config.
  std::string serialize() const;
  void save(const std::string& path) const;

  // Hash over the named sections' canonical form (feature cache keys).
  std::uint64_t section_hash(const std::vector<std::string>& sections) const;

  // Keys like synth.class.<i>.* for i = 0.. ; returns the class count.
  std::size_t synth_class_count() const;

 private:
  void validate_key(const std::string& section, const std::string& key,
                    const std::string& origin) const;
  // section -> key -> value (defaults merged at construction)
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace demonet::config
