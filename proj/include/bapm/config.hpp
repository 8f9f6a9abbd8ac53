#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bapm/metrics.hpp"
#include "bapm/phantom.hpp"
#include "bapm/training.hpp"

namespace bapm {

/// Invalid key or value; `key()` names the offending setting.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() || message.rfind(key, 0) == 0 ? message : key + ": " + message),
        key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct AblationSettings {
  int source_count = 200;
  int holdout_count = 20;
  int target_count = 60;
  std::vector<double> fractions{0.2, 0.6, 1.0};
};

/// Everything a run-config file can set.
struct Settings {
  RunConfig run;
  PhantomSpec phantom;
  ReconstructionOptions recon;
  double hd_percentile = 100.0;
  AblationSettings ablate;

  /// Runs every module's validation, rethrowing as ConfigError with the key.
  void validate() const;
};

struct ConfigKey {
  std::string key;
  std::string help;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Sets one key from its text value. Unknown keys and unparsable values throw ConfigError.
void apply_setting(Settings& settings, const std::string& key, const std::string& value);

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
void load_config_file(Settings& settings, const std::filesystem::path& path);

/// Fully resolved configuration, one `key = value` line per key in registry order.
std::string render_config(const Settings& settings);

}  // namespace bapm
