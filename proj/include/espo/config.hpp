#pragma once

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "espo/objectives.hpp"
#include "espo/trainer.hpp"

namespace espo {

inline constexpr const char* kCodeVersion = "espo-lab 0.1.0";

/// Invalid configuration; `key_path()` names the offending dotted key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key_path, const std::string& message)
      : std::runtime_error(key_path.empty() ? message : key_path + ": " + message), key_path_(std::move(key_path)) {}

  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

/// Everything one `train` invocation needs.
struct RunConfig {
  TrainConfig train;
  ObjectiveConfig objective;
  std::string label;
  std::string output_dir = "runs/run";
  std::int64_t checkpoint_every = 50;
  bool rollout_log = false;
};

/// The documented key tree with default values. `null` objective clip and
/// filter settings resolve to the algorithm's defaults.
nlohmann::json default_config_tree();

/// Human-readable key listing for --help.
std::string describe_config_keys();

/// Overlays `user` onto the defaults; unknown keys raise ConfigError. A top-level
/// `code_version` (as written in resolved configs) is accepted and ignored.
nlohmann::json merge_config(const nlohmann::json& user);

/// Applies `key=value` where key is a dotted path or a leaf name that is
/// unique across sections (`algo`, `alpha`, `eps_low`, ...). Values are parsed
/// as JSON when possible and as bare strings otherwise.
void apply_override(nlohmann::json& tree, const std::string& assignment);

RunConfig resolve_config(const nlohmann::json& tree);

/// Fully resolved tree (defaults filled in) plus the code version string.
nlohmann::json resolved_tree(const RunConfig& cfg);

/// Reads the file at `path` (when non-empty), applies overrides and resolves.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace espo
