#pragma once

#include <stdexcept>
#include <string>

namespace coe {

// Base for every error raised by the library. Callers that only need a
// message catch this; callers that recover (re-query, fallback) catch the
// more specific types below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

class ReplayMiss : public GatewayError {
 public:
  explicit ReplayMiss(const std::string& key) : GatewayError("replay miss: " + key) {}
};

class TransportError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace coe
