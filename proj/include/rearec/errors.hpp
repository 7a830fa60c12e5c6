#pragma once

#include <stdexcept>
#include <string>

namespace rearec {

// Contract-violation exceptions. The CLI maps these onto exit codes:
// argument/config problems exit 1, data and file-format problems exit 2.

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A consumer drove an object into an inconsistent state (e.g. KV cache
// layers of unequal length).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, long line_number)
      : std::runtime_error(msg + " (line " + std::to_string(line_number) + ")"),
        line(line_number) {}
  long line;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad magic / version / structural corruption in a serialized file.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally valid file whose payload fails its checksum.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value where the numeric contract requires finiteness.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rearec
