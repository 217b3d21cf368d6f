#pragma once

#include <stdexcept>
#include <string>

namespace difsel {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text: activation IDs, recipe documents, architecture files.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string token)
      : Error(message), token_(std::move(token)) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

// A well-formed request that does not fit the architecture, policy or adapter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Inputs that are structurally fine but unusable (single-class labels, empty prompt, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace difsel
