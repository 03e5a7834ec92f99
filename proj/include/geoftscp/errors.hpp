// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace geoftscp {

enum class Errc {
  DuplicateLocation,
  NonFiniteValue,
  GridNotUniform,
  IndexOutOfRange,
  PointOutOfRange,
  DomainMismatch,
  SingularSystem,
  AllDegenerate,
  EmptySegment,
  SingularAnisotropy,
  NotPositiveDefinite,
  NonPositiveVariance,
  HypothesisMismatch,
  MissingRows,
  OrderViolation,
  ConfigError,
  IoError,
};

const char* errc_name(Errc code);

/// Exception carrying one of the library error codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace geoftscp
