#pragma once

#include <stdexcept>
#include <string>

namespace semforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class SchemaViolation : public Error {
 public:
  SchemaViolation(std::string attribute, std::string reason)
      : Error("schema violation on '" + attribute + "': " + reason),
        attribute_(std::move(attribute)),
        reason_(std::move(reason)) {}

  const std::string& attribute() const { return attribute_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string attribute_;
  std::string reason_;
};

class BudgetInfeasible : public Error {
 public:
  using Error::Error;
};

class OperatorError : public Error {
 public:
  using Error::Error;
};

class RunAborted : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  DatasetError(const std::string& msg, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace semforge
