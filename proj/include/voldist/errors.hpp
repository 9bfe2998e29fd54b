#pragma once

#include <stdexcept>
#include <string>

namespace voldist {

// Error taxonomy shared by the whole library. Each category maps to a
// distinct CLI exit code (see tools/voldist.cpp).
enum class ErrorCategory {
  dimension,    // tensor shape disagreement
  domain,       // value outside the mathematical domain (log <= 0, NaN, ...)
  contract,     // API precondition violated by the caller
  parse,        // malformed input text
  data,         // well-formed input violating a data invariant
  format,       // corrupt or mismatched checkpoint/manifest
  config,       // invalid experiment configuration
  io,           // filesystem failure
  divergence,   // training produced non-finite loss
  insufficient_history,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error(ErrorCategory::dimension, m) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error(ErrorCategory::domain, m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error(ErrorCategory::contract, m) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorCategory::parse, m) {}
};
struct DataError : Error {
  explicit DataError(const std::string& m) : Error(ErrorCategory::data, m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorCategory::format, m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::config, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorCategory::io, m) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& m) : Error(ErrorCategory::divergence, m) {}
};
struct InsufficientHistoryError : Error {
  explicit InsufficientHistoryError(const std::string& m)
      : Error(ErrorCategory::insufficient_history, m) {}
};

}  // namespace voldist
