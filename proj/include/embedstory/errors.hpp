#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace embedstory {

/// Base of every error the library throws for bad inputs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file payload; `offset` is the byte position where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Dimension or shape disagreement between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Dataset or artifact content that violates a documented invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace embedstory
