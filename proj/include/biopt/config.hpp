#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace biopt {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/* Flat key = value configuration with [section] headers; section keys are
   addressed as "section.key".  Keys are validated against a fixed schema and
   unknown keys are rejected.  Environment variables override file values:
   "schedule.alpha" maps to BIOPT_SCHEDULE_ALPHA.  Command-line flags applied
   through set() override both. */
class ExperimentConfig {
 public:
  ExperimentConfig();

  static ExperimentConfig from_file(const std::string& path);
  void apply_env();
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& def) const;
  int64_t get_int(const std::string& key, int64_t def) const;
  uint64_t get_u64(const std::string& key, uint64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;

  /* checks enumerated keys (preset, model, schedule.mode, schedule.rule) */
  void validate() const;

  static const std::vector<std::string>& known_keys();
  static std::string env_name(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace biopt
