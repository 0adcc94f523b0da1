#pragma once

#include <stdexcept>
#include <string>

namespace icl {

// Root of every error the library throws. Callers that only need to report
// and move on can catch this; the CLI maps the subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (datasets, templates, embeddings).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration or argument out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// The backend could not be reached (connection refused, timeout after all retries).
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

// The backend answered but the response violates the wire contract.
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class TokenizerRejection : public BackendError {
 public:
  using BackendError::BackendError;
};

// MockBackend has no entry for the requested (context, continuation).
class MockMiss : public BackendError {
 public:
  using BackendError::BackendError;
};

// Printable form of a string with control characters escaped, for error text.
std::string quote_for_error(const std::string& text, std::size_t max_len = 80);

}  // namespace icl
