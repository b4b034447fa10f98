#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hypokernel/grid.hpp"

// Experiment runner: flat key=value configs, subcommand dispatch over the
// library modules, CSV artifacts plus exactly one JSON manifest per run.
// The manifest echoes every resolved knob so that re-dispatching the echo
// reproduces the CSV outputs byte for byte (wall time aside, the manifest
// itself is a pure function of the config).

namespace hypokernel::manifest {

inline constexpr const char* kVersion = "0.1.0";

// Invalid configuration; `key` names the offending knob.  Callers map this
// to exit code 2; runtime module failures map to exit code 1 and are
// recorded in the manifest instead.
struct ConfigError : std::invalid_argument {
  std::string key;
  ConfigError(std::string k, const std::string& msg)
      : std::invalid_argument(k + ": " + msg), key(std::move(k)) {}
};

struct ExperimentConfig {
  std::string subcommand;
  std::map<std::string, std::string> kv;
};

[[nodiscard]] const std::vector<std::string>& subcommands();

// Flat key=value lines; '#' starts a comment, blank lines are skipped.
[[nodiscard]] std::map<std::string, std::string> load_config_file(const std::string& path);

// "lo:hi:count" per axis, axes comma separated.
[[nodiscard]] grid::TensorGrid parse_grid_spec(const std::string& spec, const std::string& key);
[[nodiscard]] Eigen::VectorXd parse_vector(const std::string& s, const std::string& key);

// Validates every knob, runs the subcommand, writes its artifacts and the
// manifest <out>.json.  Returns 0 on success and 1 on a runtime module
// error; throws ConfigError before touching the filesystem when the config
// is invalid (unknown keys included).
[[nodiscard]] int dispatch(const ExperimentConfig& cfg);

}  // namespace hypokernel::manifest
