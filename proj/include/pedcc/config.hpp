#pragma once

// Flat `key = value` run configuration with dotted keys.
//
//   # comment
//   preset = paper-cifar10
//   loss.lambda3 = 400
//   train.steps = 4000
//
// Keys apply in file order, so a preset line is overridden by later keys.
// Unknown keys and malformed values are reported with their line number.

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "pedcc/trainer.hpp"

namespace pedcc {

struct RunConfig {
  ExperimentSpec experiment;
  std::string output_dir = "out";
};

// Default RunConfig for the synthetic blobs benchmark.
RunConfig default_run_config();

// Applies one key. Throws ArgumentError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
// "key=value" as given to --set.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Starts from default_run_config(). Throws FormatError carrying the line.
RunConfig parse_run_config(std::istream& is);
RunConfig load_run_config(const std::string& path);

// Cross-field checks plus existence of referenced files.
void validate_run_config(const RunConfig& cfg);

// Every key with its current value, in canonical order.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace pedcc
