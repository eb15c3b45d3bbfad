#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmfuse {

// Tensor shape or dimension mismatch.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
        iteration(iteration) {}
  std::size_t iteration;
};

// Metric undefined on the given inputs (e.g. AUC with a single class).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File system or parsing failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mmfuse
