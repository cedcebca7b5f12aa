#pragma once

#include <map>
#include <string>
#include <vector>

#include "mglow/field.hpp"

namespace mglow {

// Flat run configuration. Files are YAML; nested mappings flatten to dotted
// keys ("train: {steps: 10}" and "train.steps: 10" are equivalent). Every key
// has a default, unknown keys are rejected, and values are checked when set.
class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig from_yaml(const std::string& text);
  static RunConfig from_file(const std::string& path);

  // Throws ValidationError naming the key.
  void set(const std::string& key, const std::string& value);
  // "key=value" override from the command line.
  void set_override(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  Extents get_grid(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Cross-key checks; throws ValidationError.
  void validate() const;

  // Resolved configuration, every key, sorted.
  std::string to_yaml() const;

  const std::map<std::string, std::string>& values() const { return values_; }
  static std::vector<std::string> known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mglow
