#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace apmae {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or unsupported configuration (shapes, ratios, presets).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary or text file. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  explicit FormatError(const std::string& what) : Error(what) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

class LexError : public Error {
 public:
  LexError(const std::string& what, std::size_t line, std::size_t column)
      : Error(what + " at line " + std::to_string(line) + ", column " +
              std::to_string(column)),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace apmae
