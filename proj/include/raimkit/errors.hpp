#pragma once

#include <stdexcept>
#include <string>

namespace raimkit {

// Error hierarchy. The CLI maps each family onto a stable exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

// exit code 2
class ConfigError : public Error {
 public:
  using Error::Error;
};

// exit code 3
class DataError : public Error {
 public:
  using Error::Error;
};

// exit code 4
class NumericalError : public Error {
 public:
  using Error::Error;
};

// exit code 5
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace raimkit
