#pragma once

#include <stdexcept>
#include <string>

namespace smartim {

/// Bad user input: malformed files, records violating design invariants.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed text input (bad CSV row, unparseable number).
class ParseError : public ValidationError {
 public:
  explicit ParseError(const std::string& msg) : ValidationError(msg) {}
};

/// Out-of-range or inconsistent arguments to an operation.
class ArgumentError : public std::invalid_argument {
 public:
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A requested computation has no solution in the allowed range.
class InfeasibleError : public std::runtime_error {
 public:
  explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Not enough data to proceed (empty snapshot, no events, n too small).
class InsufficientDataError : public std::runtime_error {
 public:
  explicit InsufficientDataError(const std::string& msg)
      : std::runtime_error(msg) {}
};

namespace detail {

// Internal invariant check; active in all build types.
inline void require(bool cond, const char* msg) {
  if (!cond) throw std::logic_error(std::string("internal invariant: ") + msg);
}

}  // namespace detail

}  // namespace smartim
