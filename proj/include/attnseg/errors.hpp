#pragma once

#include <stdexcept>
#include <string>

namespace attnseg {

/// Invalid parameter values supplied by a caller (bad threshold grid, empty input lists, ...).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A model or run configuration that cannot be realized (grids that do not tile, odd depths, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Tensors or grids whose shapes or contents violate an operation's contract.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Operation invoked out of order, e.g. gradients requested before a backward pass ran.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed text input; carries the 1-based line number of the offending row.
struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, int line)
      : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  int line_number;
};

/// On-disk data inconsistent with its catalog entry or with other labels.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A required upstream artifact (checkpoint, fold file, map directory) is missing.
struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Statistically degenerate input, e.g. zero-variance differences in a paired test.
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Evaluation inputs do not cover every required slice; the message lists the ids.
struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace attnseg
