#pragma once

#include <stdexcept>
#include <string>

namespace qbf {

enum class ErrorKind { Dimension, Config, Index, State, Io, Format, Length, Numeric };

// Base of every error the library throws. The kind decides the process exit
// code used by the command-line front end.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::Dimension, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::Config, w) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error(ErrorKind::Index, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::State, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorKind::Format, w) {}

 protected:
  FormatError(ErrorKind k, const std::string& w) : Error(k, w) {}
};
struct LengthError : FormatError {
  explicit LengthError(const std::string& w) : FormatError(ErrorKind::Length, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::Numeric, w) {}
};

// 0 success, 2 config/usage, 3 data format, 4 numeric failure.
inline int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Format:
    case ErrorKind::Length:
      return 3;
    case ErrorKind::Numeric:
      return 4;
    default:
      return 2;
  }
}

}  // namespace qbf
