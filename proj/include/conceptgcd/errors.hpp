#pragma once
// Exception taxonomy shared by every module. The CLI maps these onto
// process exit codes (see tools/), so new error sites should pick the
// narrowest type that applies.

#include <stdexcept>
#include <string>

namespace conceptgcd {

// Incompatible tensor shapes (matmul operands, backward buffers, ...).
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// An argument outside its documented domain (negative temperature, m >= n, ...).
struct ParameterError : std::runtime_error {
  explicit ParameterError(const std::string& msg) : std::runtime_error(msg) {}
};

// A dataset or label violates its invariants (label out of range, empty input).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk file. `offset` is the byte position of the first
// inconsistency when known.
struct FormatError : std::runtime_error {
  long long offset;
  FormatError(const std::string& msg, long long byte_offset = -1)
      : std::runtime_error(byte_offset >= 0
                               ? msg + " (byte offset " + std::to_string(byte_offset) + ")"
                               : msg),
        offset(byte_offset) {}
};

// Filesystem failure: unreadable/unwritable path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Configuration or checkpoint inconsistent with the requested run.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf where a finite value is required.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace conceptgcd
