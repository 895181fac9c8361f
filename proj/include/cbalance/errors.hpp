#pragma once

#include <stdexcept>
#include <string>

namespace cbal {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// A value or object violates a documented invariant (bad cutoff, empty
/// index set, zero-variance column, provenance mismatch, ...).
class validation_error : public error {
 public:
  explicit validation_error(const std::string& what) : error(what) {}
};

/// An input file could not be parsed. Messages carry line (and where
/// possible column) positions.
class parse_error : public error {
 public:
  explicit parse_error(const std::string& what) : error(what) {}
};

/// A request cannot be satisfied for the given population or budget:
/// scheme sizes that do not fit, enumeration above the cap, undersized
/// clusters.
class infeasible_error : public error {
 public:
  explicit infeasible_error(const std::string& what) : error(what) {}
};

}  // namespace cbal
