#pragma once

#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbmis/scenarios.hpp"

namespace vbmis::cli {

/// Parse or validation failure; line is 0 when the problem is not tied to a
/// line (a missing required field, say).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string field, int line)
      : std::runtime_error(what), field_(std::move(field)), line_(line) {}
  const std::string& field() const noexcept { return field_; }
  int line() const noexcept { return line_; }

 private:
  std::string field_;
  int line_;
};

struct RunConfig {
  ScenarioSpec scenario;
  ExperimentConfig experiment;
  /// Sample size for the single-dataset commands (fit, mcmc).
  std::size_t data_n = 1000;
  std::string output_dir = "out";
};

/// Flat `key = value` text with dotted sections. Blank lines and lines
/// starting with '#' are skipped; `manifest.*` keys are accepted and ignored
/// so a manifest can be fed back in. scenario.name is required.
RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);

/// Every key with its resolved value, in a fixed order. Parsing this text
/// gives back the same configuration.
std::string dump_config(const RunConfig& cfg);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace vbmis::cli
