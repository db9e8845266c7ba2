#pragma once

#include <stdexcept>
#include <string>

namespace takit {

/// Base class for all takit errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateBoxError : Error {
  explicit DegenerateBoxError(const std::string& msg) : Error(msg) {}
};

struct OutOfRangeError : Error {
  explicit OutOfRangeError(const std::string& msg) : Error(msg) {}
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error(msg) {}
};

struct ShapeMismatchError : Error {
  explicit ShapeMismatchError(const std::string& msg) : Error(msg) {}
};

struct IndexOutOfRangeError : Error {
  explicit IndexOutOfRangeError(const std::string& msg) : Error(msg) {}
};

struct GridMismatchError : Error {
  explicit GridMismatchError(const std::string& msg) : Error(msg) {}
};

struct ZeroWeightSumError : Error {
  explicit ZeroWeightSumError(const std::string& msg) : Error(msg) {}
};

struct MissingRawPriorsError : Error {
  explicit MissingRawPriorsError(const std::string& msg) : Error(msg) {}
};

struct EmptyTextError : Error {
  explicit EmptyTextError(const std::string& msg) : Error(msg) {}
};

struct MalformedVerdictError : Error {
  explicit MalformedVerdictError(const std::string& msg) : Error(msg) {}
};

struct DuplicateQueryIdError : Error {
  explicit DuplicateQueryIdError(const std::string& msg) : Error(msg) {}
};

struct NonFiniteGradientError : Error {
  explicit NonFiniteGradientError(const std::string& msg) : Error(msg) {}
};

}  // namespace takit
