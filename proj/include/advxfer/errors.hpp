#pragma once

#include <stdexcept>
#include <string>

namespace advxfer {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape mismatches. Messages name the offending axes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration: bad strategy spec, out-of-range knobs, unknown config keys.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset problems: missing files, manifest mismatches, bad labels.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Training blew up (non-finite loss or gradient). Carries the run trace so far.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, std::string trace = {})
      : Error(msg), trace_(std::move(trace)) {}
  const std::string& trace() const { return trace_; }

 private:
  std::string trace_;
};

// Filesystem / serialization failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

enum class CheckpointFault {
  bad_magic,
  version_mismatch,
  truncated,
  checksum_mismatch,
  bad_contents,
};

inline const char* to_string(CheckpointFault f) {
  switch (f) {
    case CheckpointFault::bad_magic: return "bad_magic";
    case CheckpointFault::version_mismatch: return "version_mismatch";
    case CheckpointFault::truncated: return "truncated";
    case CheckpointFault::checksum_mismatch: return "checksum_mismatch";
    case CheckpointFault::bad_contents: return "bad_contents";
  }
  return "unknown";
}

class CheckpointError : public IoError {
 public:
  CheckpointError(CheckpointFault fault, const std::string& msg)
      : IoError(std::string(to_string(fault)) + ": " + msg), fault_(fault) {}
  CheckpointFault fault() const { return fault_; }

 private:
  CheckpointFault fault_;
};

}  // namespace advxfer
