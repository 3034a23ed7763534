#pragma once

#include <optional>
#include <string>

#include "run_config.hpp"

namespace invlens::cli {

// Flag values that override config keys for a single command.
struct Overrides {
  std::optional<std::string> out;
  std::optional<std::string> seed;
  std::optional<std::string> tap;
  std::optional<std::string> eps;
  std::optional<std::string> factor;
  std::optional<std::string> count;
  std::optional<std::string> checkpoint;
  std::optional<std::string> kind;
  std::optional<std::string> src;
  std::optional<std::string> donor;
};

// Runs one command; returns the process exit code. Config errors and missing
// inputs propagate as ConfigError / MissingInput.
int run_command(const std::string& name, RunConfig config, const Overrides& overrides);

}  // namespace invlens::cli
