// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dvit {

// Shape or rank disagreement between operands.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: backward on a non-scalar, no active tape, slice out of range.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or a failed numeric self-check.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent run configuration.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint decode failures stay distinguishable so callers can report
// exactly what was wrong with the file.
struct CheckpointError : IoError {
  explicit CheckpointError(const std::string& msg) : IoError(msg) {}
};
struct BadMagicError : CheckpointError {
  explicit BadMagicError(const std::string& msg) : CheckpointError(msg) {}
};
struct VersionMismatchError : CheckpointError {
  explicit VersionMismatchError(const std::string& msg) : CheckpointError(msg) {}
};
struct TruncatedFileError : CheckpointError {
  explicit TruncatedFileError(const std::string& msg) : CheckpointError(msg) {}
};
struct ChecksumError : CheckpointError {
  explicit ChecksumError(const std::string& msg) : CheckpointError(msg) {}
};

}  // namespace dvit
