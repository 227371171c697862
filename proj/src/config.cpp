#include "biopt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace biopt {

namespace {

enum class ValueType { string_t, int_t, u64_t, double_t, bool_t };

const std::map<std::string, ValueType>& schema() {
  static const std::map<std::string, ValueType> s = {
      {"preset", ValueType::string_t},
      {"seed", ValueType::u64_t},
      {"out", ValueType::string_t},
      {"log_every", ValueType::int_t},
      {"steps", ValueType::int_t},
      {"model", ValueType::string_t},
      {"schedule.mode", ValueType::string_t},
      {"schedule.alpha", ValueType::double_t},
      {"schedule.eta_u", ValueType::double_t},
      {"schedule.eta_w", ValueType::double_t},
      {"schedule.eta_lambda", ValueType::double_t},
      {"schedule.eta0", ValueType::double_t},
      {"schedule.eta0_lambda", ValueType::double_t},
      {"schedule.rule", ValueType::string_t},
      {"data.feature_dim", ValueType::int_t},
      {"data.clean_n", ValueType::int_t},
      {"data.corrupt_n", ValueType::int_t},
      {"data.val_n", ValueType::int_t},
      {"data.corruption", ValueType::double_t},
      {"data.batch_train", ValueType::int_t},
      {"data.batch_val", ValueType::int_t},
      {"data.noise_sigma1", ValueType::double_t},
      {"data.noise_sigma2", ValueType::double_t},
      {"hyperclean.c", ValueType::double_t},
      {"hyperclean.train_n", ValueType::int_t},
      {"baseline.inner_steps", ValueType::int_t},
      {"baseline.inner_step_size", ValueType::double_t},
      {"baseline.neumann_terms", ValueType::int_t},
      {"baseline.cg_iterations", ValueType::int_t},
      {"baseline.cg_tolerance", ValueType::double_t},
      {"baseline.unroll_depth", ValueType::int_t},
      {"verify.corrupt_gradient", ValueType::bool_t},
  };
  return s;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size() || v.find('-') != std::string::npos)
      throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string low = v;
  std::transform(low.begin(), low.end(), low.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (low == "true" || low == "1" || low == "yes" || low == "on") return true;
  if (low == "false" || low == "0" || low == "no" || low == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

void check_parses(const std::string& key, const std::string& value) {
  switch (schema().at(key)) {
    case ValueType::string_t: break;
    case ValueType::int_t: parse_int(key, value); break;
    case ValueType::u64_t: parse_u64(key, value); break;
    case ValueType::double_t: parse_double(key, value); break;
    case ValueType::bool_t: parse_bool(key, value); break;
  }
}

void check_enum(const std::string& key, const std::string& value,
                const std::set<std::string>& allowed) {
  if (allowed.count(value)) return;
  std::ostringstream msg;
  msg << "config key '" << key << "': '" << value << "' is not one of {";
  bool first = true;
  for (const auto& a : allowed) {
    if (!first) msg << ", ";
    msg << a;
    first = false;
  }
  msg << "}";
  throw ConfigError(msg.str());
}

}  // namespace

ExperimentConfig::ExperimentConfig() = default;

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw ConfigError(path + ":" + std::to_string(lineno) + ": empty section name");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    cfg.set(key, value);
  }
  return cfg;
}

void ExperimentConfig::apply_env() {
  for (const auto& key : known_keys()) {
    const char* v = std::getenv(env_name(key).c_str());
    if (v != nullptr) set(key, v);
  }
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!schema().count(key)) throw ConfigError("unknown config key: '" + key + "'");
  check_parses(key, value);
  values_[key] = value;
}

bool ExperimentConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string ExperimentConfig::get_string(const std::string& key, const std::string& def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

int64_t ExperimentConfig::get_int(const std::string& key, int64_t def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : parse_int(key, it->second);
}

uint64_t ExperimentConfig::get_u64(const std::string& key, uint64_t def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : parse_u64(key, it->second);
}

double ExperimentConfig::get_double(const std::string& key, double def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : parse_double(key, it->second);
}

bool ExperimentConfig::get_bool(const std::string& key, bool def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : parse_bool(key, it->second);
}

void ExperimentConfig::validate() const {
  if (has("preset"))
    check_enum("preset", values_.at("preset"),
               {"denoise", "mixture", "quality", "hyperclean", "quad-verify",
                "baseline-compare"});
  if (has("model"))
    check_enum("model", values_.at("model"), {"linear", "logistic", "mlp1"});
  if (has("schedule.mode"))
    check_enum("schedule.mode", values_.at("schedule.mode"),
               {"constant", "theoretical", "practical"});
  if (has("schedule.rule"))
    check_enum("schedule.rule", values_.at("schedule.rule"), {"plain", "adam"});
  if (has("steps") && get_int("steps", 1) < 1)
    throw ConfigError("config key 'steps': must be >= 1");
  if (has("log_every") && get_int("log_every", 1) < 1)
    throw ConfigError("config key 'log_every': must be >= 1");
}

const std::vector<std::string>& ExperimentConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, type] : schema()) {
      (void)type;
      k.push_back(key);
    }
    return k;
  }();
  return keys;
}

std::string ExperimentConfig::env_name(const std::string& key) {
  std::string name = "BIOPT_";
  for (char c : key)
    name += (c == '.') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

}  // namespace biopt
