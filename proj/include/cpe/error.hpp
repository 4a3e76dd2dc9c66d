#pragma once

#include <stdexcept>
#include <string>

namespace cpe {

enum class ErrorCategory {
  structural,  // shape mismatch, cyclic graph, malformed Dag
  numeric,     // non-finite values, divergence
  lookup,      // unknown task or node name
  inversion,   // discrete flow bisection failed to bracket
  config,      // invalid configuration
  data,        // missing or corrupt file
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& what) : Error(ErrorCategory::structural, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

class LookupError : public Error {
 public:
  explicit LookupError(const std::string& what) : Error(ErrorCategory::lookup, what) {}
};

class InversionError : public Error {
 public:
  explicit InversionError(const std::string& what) : Error(ErrorCategory::inversion, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

}  // namespace cpe
