#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epfgnn {

/// Malformed graph or dataset structure (bad endpoints, inconsistent widths).
struct StructuralInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input is well formed but the requested quantity is undefined on it.
struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Inconsistent or out-of-range configuration values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A non-finite value escaped a computation that must stay finite.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Enumeration request above the configured oracle bound.
struct OracleLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Backward pass called with a forward cache produced from different inputs.
struct StaleCacheError : std::logic_error {
  using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace epfgnn
